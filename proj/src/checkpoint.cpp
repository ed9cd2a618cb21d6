#include "dyme/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "json.hpp"

namespace dyme {

namespace {

nlohmann::json manifest(const PolicyConfig& c) {
  const auto l = c.layout();
  auto block = [](const char* name, Eigen::Index offset, Eigen::Index rows, Eigen::Index cols) {
    return nlohmann::json{{"name", name}, {"offset", offset}, {"rows", rows}, {"cols", cols}};
  };
  const Eigen::Index V = c.vocab_size, d = c.dim, H = c.hidden, F = c.feature_size();
  return nlohmann::json::array({block("embedding", l.embedding, d, V),
                                block("position", l.position, d, c.max_length),
                                block("gate_in", l.gate_in, H, F),
                                block("gate_in_bias", l.gate_in_bias, H, 1),
                                block("gate", l.gate, H, F),
                                block("gate_bias", l.gate_bias, H, 1),
                                block("mix", l.mix, H, H),
                                block("mix_bias", l.mix_bias, H, 1),
                                block("out", l.out, V, H),
                                block("out_bias", l.out_bias, V, 1)});
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyParameters<double>& params,
                     const CheckpointHeader& header) {
  const PolicyConfig& c = params.config();
  const nlohmann::json head = {
      {"format", "dyme-checkpoint"},
      {"version", 1},
      {"policy",
       {{"vocab_size", c.vocab_size},
        {"dim", c.dim},
        {"window", c.window},
        {"hidden", c.hidden},
        {"prompt_slots", c.prompt_slots},
        {"max_length", c.max_length},
        {"pad", c.pad}}},
      {"blocks", manifest(c)},
      {"count", params.size()},
      {"seed", header.seed},
      {"config_hash", header.config_hash},
      {"step", header.step}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << head.dump() << '\n';
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(params.theta()[i]);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty checkpoint");
  nlohmann::json head;
  try {
    head = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw InvalidInput(std::string("bad checkpoint header: ") + e.what());
  }
  if (head.value("format", "") != "dyme-checkpoint") throw InvalidInput("not a checkpoint");

  Checkpoint ck;
  const auto& p = head.at("policy");
  PolicyConfig& c = ck.header.policy;
  c.vocab_size = p.at("vocab_size");
  c.dim = p.at("dim");
  c.window = p.at("window");
  c.hidden = p.at("hidden");
  c.prompt_slots = p.at("prompt_slots");
  c.max_length = p.at("max_length");
  c.pad = p.at("pad");
  if (head.at("blocks") != manifest(c) || head.at("count").get<Eigen::Index>() != c.parameter_count())
    throw InvalidInput("checkpoint manifest does not match its policy shape");
  ck.header.seed = head.at("seed");
  ck.header.config_hash = head.at("config_hash");
  ck.header.step = head.at("step");

  ck.params = PolicyParameters<double>(c);
  for (Eigen::Index i = 0; i < ck.params.size(); ++i) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw InvalidInput("truncated checkpoint");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t(bytes[b]) << (8 * b);
    ck.params.theta()[i] = std::bit_cast<double>(bits);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw InvalidInput("trailing bytes in checkpoint");
  return ck;
}

}  // namespace dyme
