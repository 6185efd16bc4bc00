#include "kale/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kale {

namespace {

constexpr char kMagic[8] = {'K', 'A', 'L', 'E', 'M', 'D', 'L', '1'};

void put_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void save_checkpoint(const TransformerEncoder<float>& model, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& extras) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path);
  out.write(kMagic, 8);

  const EncoderConfig& c = model.config();
  std::ostringstream cfg;
  cfg << "num_layers=" << c.num_layers << '\n'
      << "hidden_dim=" << c.hidden_dim << '\n'
      << "num_heads=" << c.num_heads << '\n'
      << "ff_dim=" << c.ff_dim << '\n'
      << "vocab_size=" << c.vocab_size << '\n'
      << "max_seq_len=" << c.max_seq_len << '\n'
      << "dropout_rate=" << format_double(c.dropout_rate) << '\n'
      << "pooling=" << to_string(c.pooling) << '\n';
  for (const auto& [k, v] : extras) cfg << k << '=' << v << '\n';
  const std::string cfg_text = cfg.str();
  put_u32(out, static_cast<std::uint32_t>(cfg_text.size()));
  out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

  put_u32(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& [name, t] : model.parameters()) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(t.value().data()),
              static_cast<std::streamsize>(t.value().size() * 4));
  }
  if (!out) throw InputError("short write while saving checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError("not a checkpoint file: " + path);

  const std::uint32_t cfg_len = get_u32(in);
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), cfg_len);
  if (!in) throw ParseError("truncated checkpoint config block in " + path);

  Checkpoint ckpt;
  std::istringstream cfg(cfg_text);
  std::string line;
  while (std::getline(cfg, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("malformed config line '" + line + "' in " + path);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    EncoderConfig& c = ckpt.config;
    if (key == "num_layers") c.num_layers = std::stoi(val);
    else if (key == "hidden_dim") c.hidden_dim = std::stoi(val);
    else if (key == "num_heads") c.num_heads = std::stoi(val);
    else if (key == "ff_dim") c.ff_dim = std::stoi(val);
    else if (key == "vocab_size") c.vocab_size = std::stoi(val);
    else if (key == "max_seq_len") c.max_seq_len = std::stoi(val);
    else if (key == "dropout_rate") c.dropout_rate = std::stod(val);
    else if (key == "pooling") c.pooling = pooling_from_string(val);
    else ckpt.extras.emplace_back(key, val);
  }

  const std::uint32_t count = get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = get_u16(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const int rank = in.get();
    if (rank <= 0 || rank > 4) throw ParseError("bad tensor rank in " + path);
    std::vector<int> shape(static_cast<std::size_t>(rank));
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<int>(get_u32(in));
      numel *= static_cast<std::size_t>(d);
    }
    std::vector<float> data(numel);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(numel * 4));
    if (!in) throw ParseError("truncated tensor data in " + path);
    ckpt.tensors.emplace_back(name, Tensor<float>::from(std::move(data), shape, true));
  }
  return ckpt;
}

}  // namespace kale
