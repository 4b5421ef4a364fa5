// Copyright 2026 The Semindex Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "semindex/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include "semindex/errors.hpp"

namespace semindex {

namespace fs = std::filesystem;
using ag::Matrix;

namespace {

uint32_t ToLittle(uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

std::string TensorFile(const std::string& name) { return name + ".f32"; }

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

void WriteTensorF32(const fs::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  std::vector<uint32_t> buf(static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float f = static_cast<float>(m.data()[i]);
    uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    buf[static_cast<size_t>(i)] = ToLittle(bits);
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(uint32_t)));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Matrix ReadTensorF32(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing tensor file '" + path.string() + "'");
  const size_t n = static_cast<size_t>(rows * cols);
  std::vector<uint32_t> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(uint32_t)));
  if (static_cast<size_t>(in.gcount()) != n * sizeof(uint32_t)) {
    throw IoError("tensor file '" + path.string() + "' is truncated");
  }
  in.peek();
  if (!in.eof()) throw IoError("tensor file '" + path.string() + "' has trailing bytes");
  Matrix m(rows, cols);
  for (size_t i = 0; i < n; ++i) {
    const uint32_t bits = ToLittle(buf[i]);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    m.data()[i] = static_cast<double>(f);
  }
  return m;
}

void SaveCheckpoint(const fs::path& dir, const CheckpointInput& in) {
  if (!in.model || !in.recon || !in.vocabulary || !in.train_config || !in.state) {
    throw ContractError("checkpoint: incomplete input");
  }
  const SemanticIndexer& model = *in.model;
  fs::path parent = dir.parent_path().empty() ? fs::path(".") : dir.parent_path();
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create '" + parent.string() + "': " + ec.message());

  std::random_device rd;
  const fs::path tmp = parent / (dir.filename().string() + ".tmp-" + std::to_string(rd()));
  fs::create_directory(tmp, ec);
  if (ec) throw IoError("cannot create '" + tmp.string() + "': " + ec.message());

  try {
    nlohmann::json tensors = nlohmann::json::array();
    auto emit = [&](const ParameterSet& ps) {
      for (const auto& np : ps.items()) {
        WriteTensorF32(tmp / TensorFile(np.name), np.var.value());
        tensors.push_back({{"name", np.name},
                           {"shape", {np.var.rows(), np.var.cols()}},
                           {"file", TensorFile(np.name)}});
      }
    };
    emit(model.AllParameters());
    emit(in.recon->params());

    nlohmann::json initialized = nlohmann::json::array();
    for (int p = 1; p <= model.full_id_length(); ++p)
      initialized.push_back(model.codebook(p).initialized);

    std::string ids_kind = "none";
    if (in.full_ids) {
      WriteIdsTsv(*in.full_ids, tmp / "ids.tsv");
      ids_kind = "full";
    } else if (in.state->completed_positions > 0) {
      if (in.doc_ids.size() != in.state->codes.size()) {
        throw ContractError("checkpoint: doc_ids do not match the frozen codes");
      }
      WriteIdsTsv(IdTable(in.doc_ids, in.state->codes), tmp / "ids.tsv");
      ids_kind = "learned";
    }

    nlohmann::json manifest = {
        {"format_version", kCheckpointFormatVersion},
        {"model_config", ToJson(model.config())},
        {"train_config", ToJson(*in.train_config)},
        {"run_config", in.run_config},
        {"vocabulary", in.vocabulary->tokens()},
        {"tensors", tensors},
        {"state",
         {{"recon_warmed", in.state->recon_warmed},
          {"completed_positions", in.state->completed_positions},
          {"codebook_initialized", initialized},
          {"suffix_size", model.suffix_size()},
          {"ids", ids_kind}}}};
    WriteText(tmp / "manifest.json", manifest.dump(2) + "\n");

    if (fs::exists(dir)) {
      const fs::path old = parent / (dir.filename().string() + ".old-" + std::to_string(rd()));
      fs::rename(dir, old);
      fs::rename(tmp, dir);
      fs::remove_all(old, ec);
    } else {
      fs::rename(tmp, dir);
    }
  } catch (const fs::filesystem_error& e) {
    fs::remove_all(tmp, ec);
    throw IoError(std::string("checkpoint: ") + e.what());
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
}

LoadedCheckpoint LoadCheckpoint(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream min(mpath, std::ios::binary);
  if (!min) throw IoError("missing checkpoint manifest '" + mpath.string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(min);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corrupted manifest '" + mpath.string() + "': " + e.what());
  }

  LoadedCheckpoint out;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw ParseError("checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " +
                       std::to_string(kCheckpointFormatVersion) + ")");
    }
    const ModelConfig mc = ModelConfigFromJson(manifest.at("model_config"));
    out.train_config = TrainConfigFromJson(manifest.at("train_config"));
    out.run_config = manifest.at("run_config");
    out.vocabulary = Vocabulary::FromTokens(manifest.at("vocabulary").get<std::vector<std::string>>());
    if (out.vocabulary.size() != mc.vocab_size) {
      throw ParseError("manifest vocabulary size does not match the model config");
    }
    const auto& st = manifest.at("state");
    out.state.recon_warmed = st.at("recon_warmed").get<bool>();
    out.state.completed_positions = st.at("completed_positions").get<int>();
    const int suffix = st.at("suffix_size").get<int>();
    const auto initialized = st.at("codebook_initialized").get<std::vector<bool>>();
    const std::string ids_kind = st.at("ids").get<std::string>();

    out.model = std::make_unique<SemanticIndexer>(mc);
    out.recon = std::make_unique<Reconstructor>(mc);
    if (suffix > 0) out.model->EnsureSuffixCodebook(suffix, 0);
    if (static_cast<int>(initialized.size()) != out.model->full_id_length()) {
      throw ParseError("manifest codebook flags do not match the ID length");
    }
    for (int p = 1; p <= out.model->full_id_length(); ++p)
      out.model->codebook(p).initialized = initialized[static_cast<size_t>(p - 1)];

    ParameterSet all = out.model->AllParameters();
    all.Append(out.recon->params());
    std::set<std::string> seen;
    for (const auto& t : manifest.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
      const NamedParameter* np = all.Find(name);
      if (!np) throw ParseError("manifest names unknown tensor '" + name + "'");
      if (shape.size() != 2 || shape[0] != np->var.rows() || shape[1] != np->var.cols()) {
        throw ParseError("tensor '" + name + "' has an unexpected shape");
      }
      const std::string file = t.at("file").get<std::string>();
      if (file.find('/') != std::string::npos || file.find("..") != std::string::npos) {
        throw ParseError("tensor '" + name + "' has an invalid file name");
      }
      Matrix value = ReadTensorF32(dir / file, shape[0], shape[1]);
      ag::Var v = np->var;
      v.mutable_value() = std::move(value);
      seen.insert(name);
    }
    for (const auto& np : all.items())
      if (!seen.count(np.name)) throw IoError("checkpoint is missing tensor '" + np.name + "'");

    if (ids_kind == "full" || ids_kind == "learned") {
      IdTable ids = ReadIdsTsv(dir / "ids.tsv");
      const int learned_len = out.state.completed_positions;
      if (ids_kind == "full") {
        if (ids.id_length() != out.model->full_id_length()) {
          throw ParseError("ids.tsv length does not match the model");
        }
        out.learned_ids = TruncateIds(ids, ids.id_length() - learned_len);
        out.full_ids = std::move(ids);
      } else {
        if (ids.id_length() != learned_len) {
          throw ParseError("ids.tsv length does not match completed positions");
        }
        out.learned_ids = std::move(ids);
      }
      out.state.codes = out.learned_ids->ids();
    } else if (ids_kind != "none") {
      throw ParseError("manifest has an unknown ids kind '" + ids_kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corrupted manifest '" + mpath.string() + "': " + e.what());
  }
  return out;
}

}  // namespace semindex
