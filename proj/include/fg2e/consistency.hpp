#pragma once

#include <cstdint>
#include <vector>

#include "fg2e/face_model.hpp"
#include "fg2e/renderer.hpp"
#include "fg2e/tensor.hpp"

namespace fg2e {

// Per-texel editability weight, all ones at the start of an edit round and
// pointwise non-increasing while the round runs. Low values mark texels the
// current instruction is actively editing; the regularizers use the weight
// to hold everything else in place.
struct ConsistencyWeight {
  Tensor grid;  // R x R in [0,1]
  int resolution() const { return grid.rank() == 2 ? grid.dim(0) : 0; }
};

ConsistencyWeight make_consistency_weight(int resolution);

// Candidate weight for one view: attention min-max normalized over covered
// pixels, projected into UV, then mapped through 1 - a^2.
struct TemporalWeight {
  Tensor grid;                    // R x R
  std::vector<uint8_t> coverage;  // R*R, texels reached by this view
  bool covered_at(int ty, int tx) const {
    return coverage[size_t(ty) * grid.dim(1) + tx] != 0;
  }
};

// An all-background frame yields empty coverage (no texel updates). A
// constant attention map normalizes to 1 when positive and 0 when zero.
TemporalWeight temporal_weight(const Tensor& attn, const FragmentBuffer& frag,
                               const FaceModel& model, int resolution);

// Selective moving average: only texels this view covers whose candidate is
// strictly lower than the current weight move, to w*C + (1-w)*candidate.
void fuse(ConsistencyWeight& c, const TemporalWeight& tw, double w);

// Face state captured once when an edit round starts; the regularizers pull
// the evolving face back toward it wherever the consistency weight is high.
struct EditSnapshot {
  Tensor texture_before;  // R x R x 3
  PositionMap posmap_before;
};

struct RegGrads {
  double loss_tex = 0.0;
  double loss_geo = 0.0;
  Tensor grad_texture;  // d loss_tex / d texture_now
  Tensor grad_posmap;   // d loss_geo / d posmap_now grid
};

// loss_tex = sum ((texture_before - texture_now) * C)^2, C broadcast over
// channels; loss_geo likewise on position maps over jointly valid texels.
RegGrads reg_losses(const EditSnapshot& snap, const Tensor& texture_now,
                    const PositionMap& posmap_now, const ConsistencyWeight& c);

struct ConsistencyState {
  int round = 0;
  ConsistencyWeight weight;
  EditSnapshot snapshot;
};

// Starts a new edit round: weight back to ones, snapshot recaptured from the
// current face, round counter bumped.
void reset_round(ConsistencyState& state, const Tensor& texture_now, const Geometry& geom_now,
                 const FaceModel& model, int resolution);

}  // namespace fg2e
