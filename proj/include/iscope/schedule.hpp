#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "iscope/dataset.hpp"
#include "iscope/digest.hpp"
#include "iscope/error.hpp"
#include "iscope/rng.hpp"

namespace iscope {

/// Random augmentation choice for one (iteration, slot) pair.
struct AugmentDraw {
  bool flip = false;
  int shift_x = 0;  // positive moves content right
  int shift_y = 0;  // positive moves content down
  bool operator==(const AugmentDraw&) const = default;
};

struct AugmentPolicy {
  bool flip = true;
  int max_shift = 2;
};

/// Applies a draw to one input. Identity for non-image inputs. Shifts fill
/// vacated pixels with zeros; the flip mirrors each row horizontally.
inline Vector augment(const Vector& x, const AugmentDraw& draw, const std::optional<ImageShape>& image) {
  if (!image) return x;
  const long C = static_cast<long>(image->channels), H = static_cast<long>(image->height),
             W = static_cast<long>(image->width);
  Vector out = Vector::Zero(x.size());
  for (long c = 0; c < C; ++c)
    for (long y = 0; y < H; ++y)
      for (long xx = 0; xx < W; ++xx) {
        const long sy = y - draw.shift_y;
        long sx = xx - draw.shift_x;
        if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
        if (draw.flip) sx = W - 1 - sx;
        out(c * H * W + y * W + xx) = x(c * H * W + sy * W + sx);
      }
  return out;
}

/// The full record of stochastic choices for one iteration.
struct IterationRecord {
  std::uint64_t iteration = 0;
  std::uint64_t epoch = 0;
  std::vector<std::size_t> indices;
  std::vector<AugmentDraw> draws;
  bool operator==(const IterationRecord&) const = default;
};

/// Seed-derived sequence of batch compositions and augmentation draws.
///
/// Each epoch visits a keyed pseudo-random permutation of [0, n) in order;
/// iteration t covers positions [b*B, min((b+1)*B, n)) of epoch t / ceil(n/B),
/// so a trailing short batch occurs when B does not divide n. Every record is
/// computed directly from (seed, t) without touching earlier iterations.
class NoiseSchedule {
 public:
  NoiseSchedule(std::uint64_t seed, std::size_t dataset_size, std::size_t batch_size, std::uint64_t total_iterations)
      : seed_(seed), n_(dataset_size), batch_(batch_size), total_(total_iterations) {
    if (n_ == 0) throw InvalidArgument("noise schedule over an empty dataset");
    if (batch_ == 0) throw InvalidArgument("batch size must be positive");
    batch_ = std::min(batch_, n_);
    per_epoch_ = (n_ + batch_ - 1) / batch_;
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t dataset_size() const noexcept { return n_; }
  std::size_t batch_size() const noexcept { return batch_; }
  std::uint64_t total_iterations() const noexcept { return total_; }
  std::size_t batches_per_epoch() const noexcept { return per_epoch_; }

  IterationRecord record(std::uint64_t t) const {
    if (t >= total_)
      throw InvalidArgument("iteration " + std::to_string(t) + " outside schedule of " + std::to_string(total_));
    IterationRecord r;
    r.iteration = t;
    r.epoch = t / per_epoch_;
    const std::size_t slot0 = static_cast<std::size_t>(t % per_epoch_) * batch_;
    const std::size_t count = std::min(batch_, n_ - slot0);
    const IndexPermutation perm(n_, CounterRng(derive_seed(seed_, "epoch")).bits(r.epoch, 0));
    const CounterRng aug(derive_seed(seed_, "augment"));
    r.indices.reserve(count);
    r.draws.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
      r.indices.push_back(static_cast<std::size_t>(perm(slot0 + s)));
      const std::uint64_t bits = aug.bits(t, s);
      AugmentDraw d;
      d.flip = (bits & 1u) != 0;
      d.shift_x = static_cast<int>((bits >> 8) % 5) - 2;
      d.shift_y = static_cast<int>((bits >> 16) % 5) - 2;
      r.draws.push_back(d);
    }
    return r;
  }

 private:
  std::uint64_t seed_;
  std::size_t n_;
  std::size_t batch_;
  std::uint64_t total_;
  std::size_t per_epoch_ = 1;
};

/// Applies the policy's limits to a raw draw.
inline AugmentDraw restrict_draw(AugmentDraw d, const AugmentPolicy& policy) {
  if (!policy.flip) d.flip = false;
  d.shift_x = std::clamp(d.shift_x, -policy.max_shift, policy.max_shift);
  d.shift_y = std::clamp(d.shift_y, -policy.max_shift, policy.max_shift);
  return d;
}

/// The augmented minibatch for iteration t.
inline Batch batch_at(const NoiseSchedule& schedule, const Dataset& data, std::uint64_t t,
                      const AugmentPolicy& policy = {}) {
  if (schedule.dataset_size() != data.size()) throw InvalidArgument("schedule built for a different dataset size");
  const IterationRecord r = schedule.record(t);
  Batch b = data.gather(r.indices);
  if (data.image) {
    for (std::size_t j = 0; j < r.indices.size(); ++j) {
      const long col = static_cast<long>(j);
      b.inputs.col(col) = augment(b.inputs.col(col), restrict_draw(r.draws[j], policy), data.image);
    }
  }
  return b;
}

/// Fixed examples over which kernels are evaluated.
struct ProbeSet {
  Matrix inputs;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
  std::uint64_t seed = 0;
  Split source = Split::train;

  std::size_t size() const { return labels.size(); }

  std::uint64_t digest() const {
    Sha256 h;
    h.update_values(std::span<const double>(inputs.data(), static_cast<std::size_t>(inputs.size())));
    h.update_values(std::span<const int>(labels));
    return h.u64();
  }
};

/// m distinct examples chosen by a seeded permutation, in ascending index order.
inline ProbeSet make_probe_set(const Dataset& data, std::size_t m, std::uint64_t seed) {
  if (m < 2) throw InvalidArgument("probe set needs at least 2 examples");
  if (m > data.size()) throw InvalidArgument("probe set larger than dataset");
  const IndexPermutation perm(data.size(), derive_seed(seed, "probe"));
  ProbeSet p;
  p.seed = seed;
  p.source = data.split;
  for (std::size_t i = 0; i < m; ++i) p.indices.push_back(static_cast<std::size_t>(perm(i)));
  std::sort(p.indices.begin(), p.indices.end());
  Batch b = data.gather(p.indices);
  p.inputs = std::move(b.inputs);
  p.labels = std::move(b.labels);
  return p;
}

}  // namespace iscope
