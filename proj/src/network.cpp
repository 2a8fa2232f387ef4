#include "relu_sculpt/network.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "relu_sculpt/error.hpp"

namespace relu_sculpt {

using nlohmann::json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_keys(const json& obj, std::initializer_list<const char*> allowed, std::size_t index) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items()) {
    if (!ok.count(key)) throw FormatError("layer " + std::to_string(index) + ": unknown key '" + key + "'");
  }
}

// Non-negative integer, whether the JSON value was built signed or unsigned.
bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

std::size_t positive(const json& obj, const char* key, std::size_t index) {
  if (!obj.contains(key)) throw FormatError("layer " + std::to_string(index) + ": missing '" + key + "'");
  const auto& v = obj.at(key);
  if (!is_count(v) || v.get<std::size_t>() == 0) {
    throw FormatError("layer " + std::to_string(index) + ": '" + key + "' must be a positive integer");
  }
  return v.get<std::size_t>();
}

std::size_t non_negative(const json& obj, const char* key, std::size_t index, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!is_count(v)) {
    throw FormatError("layer " + std::to_string(index) + ": '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

Replacement parse_replacement(const json& v, std::size_t index) {
  if (v.is_string()) {
    if (v == "identity") return Replacement::identity();
    if (v == "poly") return Replacement::poly(0.25, 0.5, 0.0);
    throw FormatError("layer " + std::to_string(index) + ": unknown replacement '" + v.get<std::string>() + "'");
  }
  if (!v.is_object() || !v.contains("type")) {
    throw FormatError("layer " + std::to_string(index) + ": replacement must be a string or {type: ...}");
  }
  const std::string type = v.at("type");
  if (type == "identity") {
    check_keys(v, {"type"}, index);
    return Replacement::identity();
  }
  if (type == "poly") {
    check_keys(v, {"type", "a", "b", "c"}, index);
    return Replacement::poly(v.value("a", 0.25), v.value("b", 0.5), v.value("c", 0.0));
  }
  throw FormatError("layer " + std::to_string(index) + ": unknown replacement '" + type + "'");
}

Layer parse_layer(const json& obj, std::size_t i) {
  if (!obj.is_object() || !obj.contains("type") || !obj.at("type").is_string()) {
    throw FormatError("layer " + std::to_string(i) + ": expected an object with a string 'type'");
  }
  const std::string type = obj.at("type");
  if (type == "conv2d") {
    check_keys(obj, {"type", "in_ch", "out_ch", "kernel", "stride", "pad"}, i);
    return layers::Conv2d{positive(obj, "in_ch", i), positive(obj, "out_ch", i), positive(obj, "kernel", i),
                          obj.contains("stride") ? positive(obj, "stride", i) : 1, non_negative(obj, "pad", i, 0)};
  }
  if (type == "linear") {
    check_keys(obj, {"type", "in", "out"}, i);
    return layers::Linear{positive(obj, "in", i), positive(obj, "out", i)};
  }
  if (type == "maskable_activation") {
    check_keys(obj, {"type", "site_count", "replacement"}, i);
    layers::MaskableActivation act;
    if (obj.contains("site_count")) act.site_count = positive(obj, "site_count", i);
    if (obj.contains("replacement")) act.replacement = parse_replacement(obj.at("replacement"), i);
    return act;
  }
  if (type == "avg_pool") {
    check_keys(obj, {"type", "k", "global"}, i);
    if (obj.contains("global")) {
      if (!obj.at("global").is_boolean()) throw FormatError("layer " + std::to_string(i) + ": 'global' must be a boolean");
      if (obj.at("global").get<bool>()) {
        if (obj.contains("k")) throw FormatError("layer " + std::to_string(i) + ": global avg_pool takes no 'k'");
        return layers::AvgPool{1, true};
      }
    }
    return layers::AvgPool{positive(obj, "k", i), false};
  }
  if (type == "flatten") {
    check_keys(obj, {"type"}, i);
    return layers::Flatten{};
  }
  if (type == "residual_begin" || type == "residual_add") {
    if (!obj.contains("tag") || !obj.at("tag").is_string()) {
      throw FormatError("layer " + std::to_string(i) + ": missing string 'tag'");
    }
    if (type == "residual_begin") {
      check_keys(obj, {"type", "tag"}, i);
      return layers::ResidualBegin{obj.at("tag")};
    }
    check_keys(obj, {"type", "tag", "shortcut"}, i);
    layers::ResidualAdd add{obj.at("tag"), std::nullopt};
    if (obj.contains("shortcut")) {
      const auto& sc = obj.at("shortcut");
      check_keys(sc, {"out_ch", "stride"}, i);
      add.shortcut = layers::Shortcut{positive(sc, "out_ch", i), sc.contains("stride") ? positive(sc, "stride", i) : 1};
    }
    return add;
  }
  throw FormatError("layer " + std::to_string(i) + ": unknown layer type '" + type + "'");
}

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, std::size_t layer) {
  if (in + 2 * p < k) throw ShapeError(layer, "kernel larger than padded input");
  return (in + 2 * p - k) / s + 1;
}

}  // namespace

std::string layer_type_name(const Layer& layer) {
  return std::visit(overloaded{[](const layers::Conv2d&) { return "conv2d"; },
                               [](const layers::Linear&) { return "linear"; },
                               [](const layers::MaskableActivation&) { return "maskable_activation"; },
                               [](const layers::AvgPool&) { return "avg_pool"; },
                               [](const layers::Flatten&) { return "flatten"; },
                               [](const layers::ResidualBegin&) { return "residual_begin"; },
                               [](const layers::ResidualAdd&) { return "residual_add"; }},
                    layer);
}

std::vector<Shape> infer_shapes(const NetworkSpec& spec, const Shape& input_shape) {
  if (input_shape.empty() || element_count(input_shape) == 0) throw ShapeError("input shape must be non-empty");
  std::vector<Shape> out;
  out.reserve(spec.layers.size());
  std::map<std::string, std::size_t> open;  // tag -> begin layer index
  std::set<std::string> seen;
  Shape cur = input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& layer = spec.layers[i];
    std::visit(
        overloaded{
            [&](const layers::Conv2d& c) {
              if (cur.size() != 3) throw ShapeError(i, "conv2d expects [C,H,W] input, got " + to_string(cur));
              if (cur[0] != c.in_ch) {
                throw ShapeError(i, "conv2d in_ch " + std::to_string(c.in_ch) + " but input has " +
                                        std::to_string(cur[0]) + " channels");
              }
              cur = {c.out_ch, conv_extent(cur[1], c.kernel, c.stride, c.pad, i),
                     conv_extent(cur[2], c.kernel, c.stride, c.pad, i)};
            },
            [&](const layers::Linear& l) {
              if (cur.size() != 1 || cur[0] != l.in) {
                throw ShapeError(i, "linear expects [" + std::to_string(l.in) + "] input, got " + to_string(cur));
              }
              cur = {l.out};
            },
            [&](const layers::MaskableActivation& a) {
              if (a.site_count && *a.site_count != element_count(cur)) {
                throw ShapeError(i, "site_count " + std::to_string(*a.site_count) + " but activation has " +
                                        std::to_string(element_count(cur)) + " elements");
              }
            },
            [&](const layers::AvgPool& p) {
              if (cur.size() != 3) throw ShapeError(i, "avg_pool expects [C,H,W] input, got " + to_string(cur));
              if (p.global) {
                cur = {cur[0], 1, 1};
                return;
              }
              if (cur[1] < p.k || cur[2] < p.k) throw ShapeError(i, "avg_pool window larger than input");
              cur = {cur[0], cur[1] / p.k, cur[2] / p.k};
            },
            [&](const layers::Flatten&) { cur = {element_count(cur)}; },
            [&](const layers::ResidualBegin& b) {
              if (!seen.insert(b.tag).second) throw ShapeError(i, "duplicate residual tag '" + b.tag + "'");
              open[b.tag] = i;
            },
            [&](const layers::ResidualAdd& a) {
              auto it = open.find(a.tag);
              if (it == open.end()) throw ShapeError(i, "residual_add without open residual_begin '" + a.tag + "'");
              const Shape& skip = out[it->second];  // residual_begin passes its input through
              Shape projected = skip;
              if (a.shortcut) {
                if (skip.size() != 3) throw ShapeError(i, "shortcut expects [C,H,W] skip tensor");
                projected = {a.shortcut->out_ch, conv_extent(skip[1], 1, a.shortcut->stride, 0, i),
                             conv_extent(skip[2], 1, a.shortcut->stride, 0, i)};
              }
              if (projected != cur) {
                throw ShapeError(i, "residual '" + a.tag + "' shape mismatch: skip " + to_string(projected) +
                                        " vs main " + to_string(cur));
              }
              open.erase(it);
            }},
        layer);
    out.push_back(cur);
  }
  if (!open.empty()) throw ShapeError("residual_begin '" + open.begin()->first + "' is never closed");
  return out;
}

NetworkSpec network_spec_from_json(const json& doc) {
  if (!doc.is_object()) throw FormatError("network spec must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (key != "layers" && key != "input_shape" && key != "name") {
      throw FormatError("network spec: unknown key '" + key + "'");
    }
  }
  if (!doc.contains("layers") || !doc.at("layers").is_array()) throw FormatError("network spec: missing 'layers' array");
  NetworkSpec spec;
  const auto& arr = doc.at("layers");
  for (std::size_t i = 0; i < arr.size(); ++i) spec.layers.push_back(parse_layer(arr[i], i));
  if (doc.contains("input_shape")) {
    Shape s;
    for (const auto& d : doc.at("input_shape")) {
      if (!is_count(d) || d.get<std::size_t>() == 0) throw FormatError("input_shape entries must be positive");
      s.push_back(d.get<std::size_t>());
    }
    spec.input_shape = s;
  }
  return spec;
}

json to_json(const NetworkSpec& spec) {
  json arr = json::array();
  for (const Layer& layer : spec.layers) {
    json j;
    j["type"] = layer_type_name(layer);
    std::visit(overloaded{[&](const layers::Conv2d& c) {
                            j["in_ch"] = c.in_ch;
                            j["out_ch"] = c.out_ch;
                            j["kernel"] = c.kernel;
                            j["stride"] = c.stride;
                            j["pad"] = c.pad;
                          },
                          [&](const layers::Linear& l) {
                            j["in"] = l.in;
                            j["out"] = l.out;
                          },
                          [&](const layers::MaskableActivation& a) {
                            if (a.site_count) j["site_count"] = *a.site_count;
                            if (a.replacement.kind == Replacement::Kind::identity) {
                              j["replacement"] = "identity";
                            } else {
                              j["replacement"] = {{"type", "poly"},
                                                  {"a", a.replacement.a},
                                                  {"b", a.replacement.b},
                                                  {"c", a.replacement.c}};
                            }
                          },
                          [&](const layers::AvgPool& p) {
                            if (p.global) {
                              j["global"] = true;
                            } else {
                              j["k"] = p.k;
                            }
                          }, [](const layers::Flatten&) {},
                          [&](const layers::ResidualBegin& b) { j["tag"] = b.tag; },
                          [&](const layers::ResidualAdd& a) {
                            j["tag"] = a.tag;
                            if (a.shortcut) j["shortcut"] = {{"out_ch", a.shortcut->out_ch}, {"stride", a.shortcut->stride}};
                          }},
               layer);
    arr.push_back(std::move(j));
  }
  json doc{{"layers", arr}};
  if (spec.input_shape) doc["input_shape"] = *spec.input_shape;
  return doc;
}

std::string SpecOrigin::locate(std::size_t layer) const {
  if (layer < layer_lines.size()) return file.string() + ":" + std::to_string(layer_lines[layer]);
  return file.string();
}

namespace {

// Line on which each element of the top-level "layers" array starts.
std::vector<std::size_t> layer_lines(const std::string& text) {
  std::vector<std::size_t> lines;
  std::size_t line = 1, depth = 0;
  bool in_layers = false, expect_element = false;
  std::string last_string;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r') continue;
    if (in_layers && expect_element && depth == 2 && c != ']') {
      lines.push_back(line);
      expect_element = false;
    }
    if (c == '"') {
      std::string s;
      std::size_t j = i + 1;
      for (; j < text.size() && text[j] != '"'; ++j) {
        if (text[j] == '\\') ++j;
        else s += text[j];
      }
      if (depth == 1) last_string = std::move(s);
      i = j;
    } else if (c == '[' || c == '{') {
      ++depth;
      if (c == '[' && depth == 2 && last_string == "layers") in_layers = expect_element = true;
    } else if (c == ']' || c == '}') {
      if (in_layers && depth == 2) return lines;
      --depth;
    } else if (c == ',' && in_layers && depth == 2) {
      expect_element = true;
    }
  }
  return lines;
}

}  // namespace

NetworkSpec load_network_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open network spec");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // Convert the byte offset into line:column for the message.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw FormatError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
  const SpecOrigin origin{path, layer_lines(text)};
  NetworkSpec spec;
  try {
    spec = network_spec_from_json(doc);
  } catch (const Error& e) {
    // Re-parse layer by layer to find the one at fault.
    if (doc.is_object() && doc.contains("layers") && doc.at("layers").is_array()) {
      const auto& arr = doc.at("layers");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        try {
          parse_layer(arr[i], i);
        } catch (const Error&) {
          throw FormatError(origin.locate(i) + ": " + e.what());
        }
      }
    }
    throw FormatError(path.string() + ": " + e.what());
  }
  spec.origin = origin;
  return spec;
}

Network::Network(NetworkSpec spec, Shape input_shape)
    : spec_(std::move(spec)), input_shape_(std::move(input_shape)) {
  try {
    shapes_ = infer_shapes(spec_, input_shape_);
  } catch (const ShapeError& e) {
    const std::size_t i = e.layer_index();
    if (!spec_.origin || i >= spec_.layers.size()) throw;
    const std::string prefix = "layer " + std::to_string(i) + ": ";
    std::string what = e.what();
    if (what.starts_with(prefix)) what.erase(0, prefix.size());
    throw ShapeError(spec_.origin->locate(i), i, what);
  }
  ordinal_.assign(spec_.layers.size(), static_cast<std::size_t>(-1));
  partner_.assign(spec_.layers.size(), static_cast<std::size_t>(-1));
  std::map<std::string, std::size_t> open;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    if (auto* act = std::get_if<layers::MaskableActivation>(&spec_.layers[i])) {
      ordinal_[i] = maskable_.size();
      maskable_.push_back(i);
      const std::size_t n = element_count(layer_input_shape(i));
      act->site_count = n;
      total_sites_ += n;
    } else if (auto* b = std::get_if<layers::ResidualBegin>(&spec_.layers[i])) {
      open[b->tag] = i;
    } else if (auto* a = std::get_if<layers::ResidualAdd>(&spec_.layers[i])) {
      partner_[i] = open.at(a->tag);
    }
  }
}

const Shape& Network::output_shape() const { return shapes_.empty() ? input_shape_ : shapes_.back(); }

std::size_t Network::mask_ordinal(std::size_t layer_index) const {
  if (layer_index >= ordinal_.size() || ordinal_[layer_index] == static_cast<std::size_t>(-1)) {
    throw PreconditionError("layer " + std::to_string(layer_index) + " is not a maskable activation");
  }
  return ordinal_[layer_index];
}

std::vector<std::size_t> Network::site_counts() const {
  std::vector<std::size_t> out;
  for (std::size_t idx : maskable_) out.push_back(element_count(layer_input_shape(idx)));
  return out;
}

std::size_t Network::class_count() const {
  const Shape& s = output_shape();
  if (s.size() != 1) throw ShapeError("network output must be a vector of logits, got " + to_string(s));
  return s[0];
}

}  // namespace relu_sculpt
