#include "dlcm/checkpoint.hpp"

#include "dlcm/training.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

namespace dlcm {

namespace {

void append_f32(std::string& blob, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const float f = static_cast<float>(m(i, j));
      char buf[4];
      std::memcpy(buf, &f, 4);
      blob.append(buf, 4);
    }
  }
}

void append_f64(std::string& blob, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const double d = m(i, j);
      char buf[8];
      std::memcpy(buf, &d, 8);
      blob.append(buf, 8);
    }
  }
}

Matrix read_tensor(const std::string& blob, std::size_t offset, Index rows, Index cols,
                   const std::string& dtype, const std::string& name) {
  const std::size_t width = dtype == "f64" ? 8 : 4;
  const std::size_t need = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * width;
  if (offset + need > blob.size()) {
    throw IoError("checkpoint: truncated blob reading tensor '" + name + "'");
  }
  Matrix m(rows, cols);
  std::size_t pos = offset;
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      if (width == 8) {
        double d;
        std::memcpy(&d, blob.data() + pos, 8);
        m(i, j) = d;
      } else {
        float f;
        std::memcpy(&f, blob.data() + pos, 4);
        m(i, j) = static_cast<double>(f);
      }
      pos += width;
    }
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::string& dir, const ParamStore& store, const CheckpointMeta& meta,
                     const AdamW* opt, bool with_resume_state) {
  std::filesystem::create_directories(dir);
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();

  auto emit = [&](const std::string& name, const Matrix& m, const char* dtype) {
    tensors.push_back({{"name", name},
                       {"rows", m.rows()},
                       {"cols", m.cols()},
                       {"dtype", dtype},
                       {"offset", blob.size()}});
    if (std::strcmp(dtype, "f64") == 0) {
      append_f64(blob, m);
    } else {
      append_f32(blob, m);
    }
  };

  for (int i = 0; i < store.size(); ++i) {
    const ParamEntry& e = store.at(i);
    emit(e.name, e.value, "f32");
  }
  if (with_resume_state) {
    for (int i = 0; i < store.size(); ++i) {
      const ParamEntry& e = store.at(i);
      emit("master." + e.name, e.value, "f64");
      if (e.adam_m.size() > 0) {
        emit("opt.m." + e.name, e.adam_m, "f64");
        emit("opt.v." + e.name, e.adam_v, "f64");
      }
    }
  }

  nlohmann::json j;
  j["config_hash"] = meta.config_hash;
  j["step"] = meta.step;
  j["tokens_seen"] = meta.tokens_seen;
  j["rng_seed"] = meta.rng_seed;
  j["kind"] = meta.kind;
  if (!meta.model_config_json.empty()) {
    j["model_config"] = nlohmann::json::parse(meta.model_config_json);
  }
  if (opt != nullptr && with_resume_state) j["opt_step_count"] = opt->step_count();
  j["tensors"] = std::move(tensors);

  {
    std::ofstream out(dir + "/manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot write " + dir + "/manifest.json");
    out << j.dump(2) << "\n";
  }
  {
    std::ofstream out(dir + "/tensors.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot write " + dir + "/tensors.bin");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
}

CheckpointMeta load_checkpoint(const std::string& dir, ParamStore& store, AdamW* opt,
                               const std::string& expected_config_hash) {
  std::ifstream min(dir + "/manifest.json", std::ios::binary);
  if (!min) throw IoError("checkpoint: cannot open " + dir + "/manifest.json");
  nlohmann::json j;
  try {
    min >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: malformed manifest: " + std::string(e.what()));
  }

  CheckpointMeta meta;
  meta.config_hash = j.value("config_hash", "");
  meta.step = j.value("step", 0L);
  meta.tokens_seen = j.value("tokens_seen", 0L);
  meta.rng_seed = j.value("rng_seed", 0ULL);
  meta.kind = j.value("kind", "dlcm");
  if (j.contains("model_config")) meta.model_config_json = j["model_config"].dump();
  if (!expected_config_hash.empty() && meta.config_hash != expected_config_hash) {
    throw ConfigError("checkpoint: config hash mismatch (" + meta.config_hash + " vs expected " +
                      expected_config_hash + "); refusing to load");
  }

  std::ifstream bin(dir + "/tensors.bin", std::ios::binary);
  if (!bin) throw IoError("checkpoint: cannot open " + dir + "/tensors.bin");
  std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  struct Entry {
    Index rows, cols;
    std::size_t offset;
    std::string dtype;
  };
  std::map<std::string, Entry> index;
  for (const auto& tj : j.at("tensors")) {
    index[tj.at("name").get<std::string>()] =
        Entry{tj.at("rows").get<Index>(), tj.at("cols").get<Index>(),
              tj.at("offset").get<std::size_t>(), tj.at("dtype").get<std::string>()};
  }

  auto fetch = [&](const std::string& name) -> Matrix {
    const Entry& e = index.at(name);
    return read_tensor(blob, e.offset, e.rows, e.cols, e.dtype, name);
  };

  for (int i = 0; i < store.size(); ++i) {
    ParamEntry& e = store.at(i);
    const Index er = e.value.rows();
    const Index ec = e.value.cols();
    Matrix loaded;
    if (index.count("master." + e.name) > 0) {
      loaded = fetch("master." + e.name);
    } else if (index.count(e.name) > 0) {
      loaded = fetch(e.name);
    } else {
      throw IoError("checkpoint: tensor '" + e.name + "' missing");
    }
    if (loaded.rows() != er || loaded.cols() != ec) {
      throw IoError("checkpoint: tensor shape mismatch for '" + e.name + "'");
    }
    e.value = std::move(loaded);
    if (index.count("opt.m." + e.name) > 0) {
      e.adam_m = fetch("opt.m." + e.name);
      e.adam_v = fetch("opt.v." + e.name);
    }
  }
  if (opt != nullptr && j.contains("opt_step_count")) {
    opt->set_step_count(j["opt_step_count"].get<long>());
  }
  return meta;
}

}  // namespace dlcm
