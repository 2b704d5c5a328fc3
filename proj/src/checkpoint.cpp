#include "tta/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace tta {
namespace {

constexpr const char* kMagic = "tta-checkpoint v1";

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

std::string config_line(const ModelConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "config arch=" << to_string(c.arch) << " layers=" << c.layers << " dim=" << c.dim
      << " heads=" << c.heads << " ffn_dim=" << c.ffn_dim << " vocab_size=" << c.vocab_size
      << " max_len=" << c.max_len << " dropout=" << c.dropout
      << " diag_mask=" << (c.diag_mask ? 1 : 0) << " layer_norm_eps=" << c.layer_norm_eps;
  return out.str();
}

ModelConfig parse_config_line(const std::string& line) {
  std::istringstream in(line);
  std::string word;
  in >> word;
  if (word != "config") throw FormatError("checkpoint: expected config line, got '" + line + "'");
  std::map<std::string, std::string> kv;
  while (in >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: bad config entry '" + word + "'");
    kv[word.substr(0, eq)] = word.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("checkpoint: config lacks '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.arch = parse_architecture(get("arch"));
  c.layers = std::stoi(get("layers"));
  c.dim = std::stoi(get("dim"));
  c.heads = std::stoi(get("heads"));
  c.ffn_dim = std::stoi(get("ffn_dim"));
  c.vocab_size = std::stoi(get("vocab_size"));
  c.max_len = std::stoi(get("max_len"));
  c.dropout = std::stod(get("dropout"));
  c.diag_mask = get("diag_mask") == "1";
  c.layer_norm_eps = std::stod(get("layer_norm_eps"));
  c.validate();
  return c;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model) {
  ModelParams<T> params = model.params;
  auto named = params.named();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  out << kMagic << '\n' << config_line(model.config) << '\n';
  for (const auto& t : named) {
    out << "tensor " << t.name << " f32 " << t.value->rows() << ' ' << t.value->cols() << '\n';
  }
  out << '\n';
  for (const auto& t : named) {
    for (Eigen::Index i = 0; i < t.value->size(); ++i) {
      const float f = static_cast<float>(t.value->data()[i]);
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof bits);
      bits = to_little_endian(bits);
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw FormatError("checkpoint: unsupported header in " + path.string());
  }
  if (!std::getline(in, line)) throw FormatError("checkpoint: truncated header");
  Model<T> model;
  model.config = parse_config_line(line);
  model.params = ModelParams<T>::zeros(model.config);
  auto named = model.params.named();

  std::size_t index = 0;
  while (std::getline(in, line) && !line.empty()) {
    std::istringstream fields(line);
    std::string tag, name, dtype;
    Eigen::Index rows = 0, cols = 0;
    fields >> tag >> name >> dtype >> rows >> cols;
    if (tag != "tensor" || dtype != "f32" || fields.fail()) {
      throw FormatError("checkpoint: bad tensor line '" + line + "'");
    }
    if (index >= named.size() || named[index].name != name) {
      throw FormatError("checkpoint: unexpected tensor '" + name + "'");
    }
    if (named[index].value->rows() != rows || named[index].value->cols() != cols) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_string(rows, cols) +
                        ", config implies " + shape_string(*named[index].value));
    }
    ++index;
  }
  if (index != named.size()) throw FormatError("checkpoint: header lists too few tensors");

  for (const auto& t : named) {
    for (Eigen::Index i = 0; i < t.value->size(); ++i) {
      std::uint32_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), sizeof bits);
      if (!in) throw FormatError("checkpoint: data ends inside tensor '" + t.name + "'");
      bits = to_little_endian(bits);
      float f = 0;
      std::memcpy(&f, &bits, sizeof f);
      t.value->data()[i] = static_cast<T>(f);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes after the last tensor");
  return model;
}

template void save_checkpoint(const std::filesystem::path&, const Model<float>&);
template void save_checkpoint(const std::filesystem::path&, const Model<double>&);
template Model<float> load_checkpoint(const std::filesystem::path&);
template Model<double> load_checkpoint(const std::filesystem::path&);

}  // namespace tta
