#pragma once

#include <string>

#include "fg2e/face_model.hpp"

namespace fg2e {

// Writes geometry with the model's UV layout and topology as a Wavefront OBJ
// (v/vt/f records, 1-based indices). An optional mtl/texture pair makes the
// exported mesh preview with its texture in common viewers.
void write_obj(const std::string& path, const Geometry& geom, const FaceModel& model,
               const std::string& texture_png = "");

}  // namespace fg2e
