#include "batcher/serialize.hpp"

namespace batcher {

std::string serialize_entity(const EntityRecord& e) {
    std::string out;
    for (std::size_t i = 0; i < e.attrs.size(); ++i) {
        if (i > 0) out += ", ";
        out += e.attrs[i].first;
        out += ": ";
        out += e.attrs[i].second;
    }
    return out;
}

std::string serialize_pair(const EntityPair& p) {
    return serialize_entity(p.left) + " [SEP] " + serialize_entity(p.right);
}

std::size_t count_tokens(std::string_view text) {
    return (text.size() + 3) / 4;
}

SerializedText make_serialized(std::string text) {
    SerializedText st;
    st.token_count = count_tokens(text);
    st.text = std::move(text);
    return st;
}

}  // namespace batcher
