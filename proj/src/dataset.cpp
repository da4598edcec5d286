#include "perdpm/dataset.hpp"

#include <bit>
#include <fstream>
#include <stdexcept>

namespace perdpm {

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; big-endian hosts are unsupported");

namespace {

using nlohmann::json;

json tensor_entry(const Tensor& t, const std::string& file) {
  return json{{"shape", t.shape}, {"file", file}};
}

Shape shape_from_json(const json& j) {
  Shape s;
  for (const auto& e : j) s.push_back(e.get<std::size_t>());
  return s;
}

}  // namespace

void write_f64_file(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

Tensor read_f64_file(const std::filesystem::path& path, const Shape& shape) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != numel(shape) * sizeof(double)) {
    throw std::runtime_error(path.filename().string() + ": payload is " +
                             std::to_string(bytes) + " bytes but manifest shape " +
                             shape_str(shape) + " needs " +
                             std::to_string(numel(shape) * sizeof(double)));
  }
  Tensor t(shape);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("short read: " + path.string());
  return t;
}

CohortDataset CohortDataset::subset(const std::vector<std::size_t>& rows) const {
  CohortDataset out;
  std::size_t T = t(), dx = d_x(), du = d_u(), dg = d_g();
  out.x = Tensor({rows.size(), T, dx});
  out.u = Tensor({rows.size(), T, du});
  out.g = Tensor({rows.size(), dg});
  out.binary_observations = binary_observations;
  out.seed = seed;
  out.config = config;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t i = rows[r];
    std::copy_n(x.data.begin() + i * T * dx, T * dx, out.x.data.begin() + r * T * dx);
    std::copy_n(u.data.begin() + i * T * du, T * du, out.u.data.begin() + r * T * du);
    std::copy_n(g.data.begin() + i * dg, dg, out.g.data.begin() + r * dg);
    out.lengths.push_back(lengths[i]);
  }
  if (truth) {
    GroundTruth gt;
    std::size_t K = truth->v_true.cols();
    std::size_t dz = truth->z_true.shape.at(2);
    gt.s_true = truth->s_true;
    gt.v_true = Tensor({rows.size(), K});
    gt.z_true = Tensor({rows.size(), T, dz});
    gt.state_labels = Tensor({rows.size(), T});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::size_t i = rows[r];
      std::copy_n(truth->v_true.data.begin() + i * K, K, gt.v_true.data.begin() + r * K);
      std::copy_n(truth->z_true.data.begin() + i * T * dz, T * dz,
                  gt.z_true.data.begin() + r * T * dz);
      std::copy_n(truth->state_labels.data.begin() + i * T, T,
                  gt.state_labels.data.begin() + r * T);
    }
    out.truth = std::move(gt);
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const CohortDataset& ds) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "perdpm-dataset";
  manifest["dtype"] = "f64le";
  manifest["seed"] = ds.seed;
  manifest["observations"] = ds.binary_observations ? "binary" : "continuous";
  manifest["config"] = ds.config;
  manifest["lengths"] = ds.lengths;
  json tensors;
  tensors["X"] = tensor_entry(ds.x, "X.bin");
  tensors["U"] = tensor_entry(ds.u, "U.bin");
  tensors["G"] = tensor_entry(ds.g, "G.bin");
  write_f64_file(dir / "X.bin", ds.x);
  write_f64_file(dir / "U.bin", ds.u);
  write_f64_file(dir / "G.bin", ds.g);
  if (ds.truth) {
    tensors["Ztrue"] = tensor_entry(ds.truth->z_true, "Ztrue.bin");
    tensors["Vtrue"] = tensor_entry(ds.truth->v_true, "Vtrue.bin");
    tensors["Strue"] = tensor_entry(ds.truth->s_true, "Strue.bin");
    tensors["labels"] = tensor_entry(ds.truth->state_labels, "labels.bin");
    write_f64_file(dir / "Ztrue.bin", ds.truth->z_true);
    write_f64_file(dir / "Vtrue.bin", ds.truth->v_true);
    write_f64_file(dir / "Strue.bin", ds.truth->s_true);
    write_f64_file(dir / "labels.bin", ds.truth->state_labels);
  }
  manifest["tensors"] = tensors;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write manifest to " + dir.string());
}

CohortDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest: " + (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt manifest in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("dtype", "") != "f64le") {
    throw std::runtime_error("unsupported dtype in manifest: " + manifest.value("dtype", ""));
  }
  const json& tensors = manifest.at("tensors");
  auto load = [&](const char* name) {
    const json& e = tensors.at(name);
    return read_f64_file(dir / e.at("file").get<std::string>(), shape_from_json(e.at("shape")));
  };
  CohortDataset ds;
  ds.x = load("X");
  ds.u = load("U");
  ds.g = load("G");
  ds.seed = manifest.value("seed", std::uint64_t{0});
  ds.binary_observations = manifest.value("observations", "continuous") == "binary";
  ds.config = manifest.value("config", json::object());
  ds.lengths = manifest.at("lengths").get<std::vector<std::size_t>>();
  if (ds.x.rank() != 3 || ds.u.rank() != 3 || ds.g.rank() != 2) {
    throw std::runtime_error("manifest shapes have unexpected ranks");
  }
  if (ds.lengths.size() != ds.n()) {
    throw std::runtime_error("lengths entry count does not match N");
  }
  if (tensors.contains("Ztrue")) {
    GroundTruth gt;
    gt.z_true = load("Ztrue");
    gt.v_true = load("Vtrue");
    gt.s_true = load("Strue");
    gt.state_labels = load("labels");
    ds.truth = std::move(gt);
  }
  return ds;
}

}  // namespace perdpm
