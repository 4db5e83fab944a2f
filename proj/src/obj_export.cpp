#include "fg2e/obj_export.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fg2e/common.hpp"

namespace fg2e {

void write_obj(const std::string& path, const Geometry& geom, const FaceModel& model,
               const std::string& texture_png) {
  if (int(geom.vertices.size()) != model.vertex_count())
    throw std::invalid_argument("geometry does not match model");
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path);

  std::filesystem::path obj_path(path);
  if (!texture_png.empty()) {
    std::filesystem::path mtl_path = obj_path;
    mtl_path.replace_extension(".mtl");
    std::ofstream mtl(mtl_path);
    if (!mtl) throw FormatError("cannot open for writing: " + mtl_path.string());
    mtl << "newmtl face\n";
    mtl << "Kd 1 1 1\n";
    mtl << "map_Kd " << std::filesystem::path(texture_png).filename().string() << "\n";
    out << "mtllib " << mtl_path.filename().string() << "\n";
  }

  char line[128];
  for (const auto& v : geom.vertices) {
    std::snprintf(line, sizeof line, "v %.9g %.9g %.9g\n", v.x, v.y, v.z);
    out << line;
  }
  for (const auto& t : model.uv) {
    std::snprintf(line, sizeof line, "vt %.9g %.9g\n", t.x, t.y);
    out << line;
  }
  if (!texture_png.empty()) out << "usemtl face\n";
  for (const auto& f : model.faces)
    out << "f " << f[0] + 1 << "/" << f[0] + 1 << " " << f[1] + 1 << "/" << f[1] + 1 << " "
        << f[2] + 1 << "/" << f[2] + 1 << "\n";
  if (!out) throw FormatError("write failed: " + path);
}

}  // namespace fg2e
