#include "qreform/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "qreform/error.hpp"

namespace qreform {
namespace {

constexpr std::string_view kMagic = "qreform-checkpoint";

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void append_le(std::string& out, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  double v = 0.0;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

std::vector<NamedTensor> tensor_table(Checkpoint& ckpt) {
  std::vector<NamedTensor> out;
  std::vector<Parameter*> params = ckpt.model.params();
  for (Parameter* p : params) out.push_back({p->name, &p->value});
  out.push_back({"metric_embeddings", &ckpt.model.metric_embeddings});
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"adam.m." + params[i]->name, &ckpt.optimizer.m[i]});
    out.push_back({"adam.v." + params[i]->name, &ckpt.optimizer.v[i]});
  }
  return out;
}

/// Line-oriented reader over the header part of the file.
class Cursor {
 public:
  Cursor(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  std::string line() {
    const auto end = data_.find('\n', pos_);
    if (end == std::string::npos) fail("truncated header");
    std::string out = data_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return out;
  }

  std::string bytes(std::size_t n) {
    if (pos_ + n > data_.size()) fail("truncated header");
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  /// "<key> <value>" line; returns the value.
  std::string field(std::string_view key) {
    const std::string l = line();
    if (l.size() <= key.size() || l.compare(0, key.size(), key) != 0 || l[key.size()] != ' ') {
      fail("expected '" + std::string(key) + "', got '" + l + "'");
    }
    return l.substr(key.size() + 1);
  }

  std::size_t number(std::string_view key) {
    const std::string v = field(key);
    try {
      std::size_t used = 0;
      const unsigned long long n = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      fail("bad number for " + std::string(key));
    }
    return 0;
  }

  std::size_t position() const { return pos_; }

  [[noreturn]] void fail(const std::string& what) const { throw DataError(path_ + ": corrupt checkpoint: " + what); }

 private:
  const std::string& data_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, Checkpoint& ckpt) {
  std::vector<Parameter*> params = ckpt.model.params();
  if (ckpt.optimizer.m.size() != params.size()) ckpt.optimizer = AdamState(ckpt.optimizer.options, params);
  const std::vector<NamedTensor> table = tensor_table(ckpt);

  std::string payload;
  for (const NamedTensor& t : table) {
    for (double v : t.tensor->data()) append_le(payload, v);
  }

  const std::string config_text = to_text(ckpt.config);
  std::string vocab_text;
  for (const std::string& w : ckpt.vocab.regular_words()) vocab_text += w + "\n";

  std::ostringstream header;
  header << kMagic << "\n";
  header << "version " << kCheckpointVersion << "\n";
  header << "epoch " << ckpt.epoch << "\n";
  header << "best_validation_loss " << hex_double(ckpt.best_validation_loss) << "\n";
  header << "adam_step " << ckpt.optimizer.step << "\n";
  header << "config_bytes " << config_text.size() << "\n" << config_text;
  header << "vocab_bytes " << vocab_text.size() << "\n" << vocab_text;
  header << "tensors " << table.size() << "\n";
  for (const NamedTensor& t : table) {
    header << t.name << " " << t.tensor->rank();
    for (std::size_t d : t.tensor->shape()) header << " " << d;
    header << "\n";
  }
  char checksum[32];
  std::snprintf(checksum, sizeof checksum, "%016llx", static_cast<unsigned long long>(fnv1a(payload)));
  header << "payload " << payload.size() << " " << checksum << "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw DataError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string data = buf.str();
  Cursor cur(data, path);

  if (cur.line() != kMagic) cur.fail("bad magic");
  if (cur.number("version") != static_cast<std::size_t>(kCheckpointVersion)) cur.fail("unsupported version");
  Checkpoint ckpt;
  ckpt.epoch = cur.number("epoch");
  {
    const std::string v = cur.field("best_validation_loss");
    char* end = nullptr;
    ckpt.best_validation_loss = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size()) cur.fail("bad best_validation_loss");
  }
  const std::size_t adam_step = cur.number("adam_step");
  try {
    ckpt.config = parse_config(cur.bytes(cur.number("config_bytes")));
  } catch (const UsageError& e) {
    cur.fail(std::string("config: ") + e.what());
  }
  {
    std::istringstream words(cur.bytes(cur.number("vocab_bytes")));
    std::vector<std::string> list;
    std::string w;
    while (std::getline(words, w)) list.push_back(w);
    try {
      ckpt.vocab = Vocabulary::from_words(list);
    } catch (const Error& e) {
      cur.fail(std::string("vocabulary: ") + e.what());
    }
  }

  ckpt.model = Model::create(ckpt.vocab, ckpt.config.dims, "", ckpt.config.seed);
  std::vector<Parameter*> params = ckpt.model.params();
  ckpt.optimizer = AdamState(AdamOptions{ckpt.config.lr}, params);
  ckpt.optimizer.step = static_cast<std::int64_t>(adam_step);
  const std::vector<NamedTensor> table = tensor_table(ckpt);

  if (cur.number("tensors") != table.size()) cur.fail("tensor count does not match the model");
  for (const NamedTensor& t : table) {
    std::istringstream spec(cur.line());
    std::string name;
    std::size_t rank = 0;
    spec >> name >> rank;
    Shape shape(rank);
    for (std::size_t& d : shape) spec >> d;
    if (!spec || name != t.name) cur.fail("unexpected tensor entry '" + name + "' (wanted " + t.name + ")");
    if (shape != t.tensor->shape()) {
      cur.fail("tensor " + name + " has shape " + shape_string(shape) + ", model expects " +
               shape_string(t.tensor->shape()));
    }
  }
  std::istringstream payload_line(cur.field("payload"));
  std::size_t payload_size = 0;
  std::string checksum;
  payload_line >> payload_size >> checksum;
  const std::size_t start = cur.position();
  if (data.size() - start != payload_size) cur.fail("payload size mismatch");
  const std::string_view payload(data.data() + start, payload_size);
  char expected[32];
  std::snprintf(expected, sizeof expected, "%016llx", static_cast<unsigned long long>(fnv1a(payload)));
  if (checksum != expected) cur.fail("checksum mismatch");

  std::size_t need = 0;
  for (const NamedTensor& t : table) need += t.tensor->size() * 8;
  if (need != payload_size) cur.fail("payload does not cover the tensor table");
  const char* p = payload.data();
  for (const NamedTensor& t : table) {
    for (double& v : t.tensor->data()) {
      v = read_le(p);
      p += 8;
    }
  }
  return ckpt;
}

}  // namespace qreform
