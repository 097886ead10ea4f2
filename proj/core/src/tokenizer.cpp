#include "w2s/tokenizer.hpp"

namespace w2s {

std::vector<int> ByteTokenizer::encode(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) {
    const int id = static_cast<unsigned char>(c);
    if (id != kPadId) out.push_back(id);
  }
  return out;
}

std::string ByteTokenizer::decode(const std::vector<int>& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t != kPadId) out.push_back(static_cast<char>(t));
  }
  return out;
}

}  // namespace w2s
