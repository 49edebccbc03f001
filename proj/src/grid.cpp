#include "powerformer/grid.hpp"

#include "powerformer/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace powerformer {

namespace {

struct Row {
  int line = 0;
  std::vector<double> values;
};

struct Block {
  int line = 0;
  std::vector<Row> rows;
};

std::string strip_comments(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_comment = false;
  for (char c : text) {
    if (c == '\n') {
      in_comment = false;
      out.push_back(c);
    } else if (c == '%') {
      in_comment = true;
    } else if (!in_comment) {
      out.push_back(c);
    }
  }
  return out;
}

int line_of(const std::string& text, std::size_t pos) {
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

double parse_number(std::string_view token, int line) {
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (!token.empty() && token.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    if (token == "Inf" || token == "inf") return HUGE_VAL;
    if (token == "-Inf" || token == "-inf") return -HUGE_VAL;
    throw Error(ErrorCode::MalformedRow,
                "line " + std::to_string(line) + ": non-numeric token '" + std::string(token) + "'");
  }
  return value;
}

std::optional<double> find_scalar(const std::string& text, const std::string& name) {
  const std::string key = "mpc." + name;
  std::size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    std::size_t p = pos + key.size();
    while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
    if (p < text.size() && text[p] == '=') {
      ++p;
      std::size_t end = text.find(';', p);
      if (end == std::string::npos) end = text.find('\n', p);
      std::string token = text.substr(p, end - p);
      token.erase(std::remove_if(token.begin(), token.end(),
                                 [](unsigned char c) { return std::isspace(c); }),
                  token.end());
      return parse_number(token, line_of(text, p));
    }
    pos = p;
  }
  return std::nullopt;
}

std::optional<Block> find_block(const std::string& text, const std::string& name) {
  const std::string key = "mpc." + name;
  std::size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    std::size_t p = pos + key.size();
    // reject prefixes such as mpc.bus_name when looking for mpc.bus
    if (p < text.size() && (std::isalnum(static_cast<unsigned char>(text[p])) || text[p] == '_')) {
      pos = p;
      continue;
    }
    while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
    if (p >= text.size() || text[p] != '=') {
      pos = p;
      continue;
    }
    ++p;
    while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
    if (p >= text.size() || text[p] != '[') {
      pos = p;
      continue;
    }
    const std::size_t open = p + 1;
    const std::size_t close = text.find(']', open);
    if (close == std::string::npos) {
      throw Error(ErrorCode::MalformedRow,
                  "line " + std::to_string(line_of(text, pos)) + ": unterminated block mpc." + name);
    }
    Block block;
    block.line = line_of(text, pos);
    int line = line_of(text, open);
    std::vector<double> current;
    int current_line = line;
    std::string token;
    auto flush_token = [&] {
      if (!token.empty()) {
        if (current.empty()) current_line = line;
        current.push_back(parse_number(token, line));
        token.clear();
      }
    };
    auto flush_row = [&] {
      flush_token();
      if (!current.empty()) {
        block.rows.push_back({current_line, std::move(current)});
        current.clear();
      }
    };
    for (std::size_t i = open; i < close; ++i) {
      const char c = text[i];
      if (c == '\n') {
        flush_row();
        ++line;
      } else if (c == ';') {
        flush_row();
      } else if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
        flush_token();
      } else if (c == '.' && i + 2 < close && text[i + 1] == '.' && text[i + 2] == '.') {
        // MATLAB line continuation: the row goes on after the newline
        flush_token();
        while (i < close && text[i] != '\n') ++i;
        ++line;
      } else {
        token.push_back(c);
      }
    }
    flush_row();
    return block;
  }
  return std::nullopt;
}

Block require_block(const std::string& text, const std::string& name) {
  auto block = find_block(text, name);
  if (!block) throw Error(ErrorCode::MissingBlock, "mpc." + name + " not found");
  return *block;
}

void check_columns(const Block& block, const std::string& name, std::size_t min_cols) {
  if (block.rows.empty()) return;
  const std::size_t width = block.rows.front().values.size();
  for (const auto& row : block.rows) {
    if (row.values.size() != width || row.values.size() < min_cols) {
      throw Error(ErrorCode::MalformedRow,
                  "line " + std::to_string(row.line) + ": mpc." + name + " row has " +
                      std::to_string(row.values.size()) + " columns, expected " +
                      std::to_string(std::max(width, min_cols)));
    }
  }
}

int as_int(double v, int line) {
  if (v != std::floor(v)) {
    throw Error(ErrorCode::MalformedRow,
                "line " + std::to_string(line) + ": expected an integer, got " + std::to_string(v));
  }
  return static_cast<int>(v);
}

}  // namespace

int GridCase::node_of(int bus_id) const {
  // buses are small; ids are looked up through the sorted order
  const auto order = bus_order();
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (buses[static_cast<std::size_t>(order[k])].id == bus_id) return static_cast<int>(k);
  }
  throw Error(ErrorCode::DanglingReference, "bus " + std::to_string(bus_id) + " does not exist");
}

std::vector<int> GridCase::bus_order() const {
  std::vector<int> order(buses.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return buses[static_cast<std::size_t>(a)].id < buses[static_cast<std::size_t>(b)].id; });
  return order;
}

int GridCase::slack_node() const {
  const auto order = bus_order();
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (buses[static_cast<std::size_t>(order[k])].type == BusType::slack) return static_cast<int>(k);
  }
  throw Error(ErrorCode::NoSlackBus, "case has no slack bus");
}

std::vector<int> GridCase::load_nodes() const {
  std::vector<int> out;
  const auto order = bus_order();
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Bus& b = buses[static_cast<std::size_t>(order[k])];
    if (b.pd != 0.0 || b.qd != 0.0) out.push_back(static_cast<int>(k));
  }
  return out;
}

void validate(const GridCase& grid) {
  if (!(grid.base_mva > 0.0)) throw Error(ErrorCode::InvalidCase, "baseMVA must be positive");
  std::set<int> ids;
  int slack = 0;
  for (const auto& b : grid.buses) {
    if (!ids.insert(b.id).second) {
      throw Error(ErrorCode::InvalidCase, "duplicate bus id " + std::to_string(b.id));
    }
    if (b.type == BusType::slack) ++slack;
  }
  if (slack == 0) throw Error(ErrorCode::NoSlackBus, "case has no slack bus");
  if (slack > 1) throw Error(ErrorCode::InvalidCase, "case has " + std::to_string(slack) + " slack buses");
  for (std::size_t i = 0; i < grid.branches.size(); ++i) {
    const auto& br = grid.branches[i];
    if (!ids.count(br.from) || !ids.count(br.to)) {
      throw Error(ErrorCode::DanglingReference, "branch " + std::to_string(i) + " (" +
                                                    std::to_string(br.from) + "-" + std::to_string(br.to) +
                                                    ") names a nonexistent bus");
    }
    if (br.from == br.to) {
      throw Error(ErrorCode::InvalidCase, "branch " + std::to_string(i) + " is a self-loop");
    }
  }
  for (std::size_t i = 0; i < grid.generators.size(); ++i) {
    const auto& g = grid.generators[i];
    if (!ids.count(g.bus)) {
      throw Error(ErrorCode::DanglingReference,
                  "generator " + std::to_string(i) + " at nonexistent bus " + std::to_string(g.bus));
    }
    if (g.in_service && (g.pg < g.pmin || g.pg > g.pmax)) {
      throw Error(ErrorCode::InvalidCase, "generator " + std::to_string(i) + " Pg=" + format_number(g.pg) +
                                              " outside [" + format_number(g.pmin) + ", " +
                                              format_number(g.pmax) + "]");
    }
  }
  if (grid.gencost.size() != grid.generators.size()) {
    throw Error(ErrorCode::InvalidCase, "gencost rows do not match generator count");
  }
}

GridCase parse_matpower_case(std::string_view raw) {
  const std::string text = strip_comments(raw);
  GridCase grid;

  {
    const auto fn = text.find("function");
    if (fn != std::string::npos) {
      const auto eq = text.find('=', fn);
      const auto nl = text.find('\n', fn);
      if (eq != std::string::npos && eq < nl) {
        std::string name = text.substr(eq + 1, nl - eq - 1);
        name.erase(std::remove_if(name.begin(), name.end(), [](unsigned char c) { return std::isspace(c); }),
                   name.end());
        if (!name.empty()) grid.name = name;
      }
    }
  }

  const auto base = find_scalar(text, "baseMVA");
  if (!base) throw Error(ErrorCode::MissingBlock, "mpc.baseMVA not found");
  grid.base_mva = *base;

  const Block bus = require_block(text, "bus");
  const Block gen = require_block(text, "gen");
  const Block branch = require_block(text, "branch");
  check_columns(bus, "bus", 13);
  check_columns(gen, "gen", 10);
  check_columns(branch, "branch", 11);

  for (const auto& row : bus.rows) {
    const auto& v = row.values;
    Bus b;
    b.id = as_int(v[0], row.line);
    const int type = as_int(v[1], row.line);
    if (type < 1 || type > 3) {
      throw Error(ErrorCode::MalformedRow,
                  "line " + std::to_string(row.line) + ": unsupported bus type " + std::to_string(type));
    }
    b.type = static_cast<BusType>(type);
    b.pd = v[2];
    b.qd = v[3];
    b.gs = v[4];
    b.bs = v[5];
    b.vm = v[7];
    b.va = v[8];
    b.vmax = v[11];
    b.vmin = v[12];
    grid.buses.push_back(b);
  }
  for (const auto& row : gen.rows) {
    const auto& v = row.values;
    Generator g;
    g.bus = as_int(v[0], row.line);
    g.pg = v[1];
    g.qg = v[2];
    g.qmax = v[3];
    g.qmin = v[4];
    g.vg = v[5];
    g.in_service = v[7] > 0.0;
    g.pmax = v[8];
    g.pmin = v[9];
    grid.generators.push_back(g);
  }
  for (const auto& row : branch.rows) {
    const auto& v = row.values;
    Branch br;
    br.from = as_int(v[0], row.line);
    br.to = as_int(v[1], row.line);
    br.r = v[2];
    br.x = v[3];
    br.b = v[4];
    br.rate = v[5];
    br.in_service = v[10] > 0.0;
    grid.branches.push_back(br);
  }

  if (auto cost = find_block(text, "gencost")) {
    if (cost->rows.size() < grid.generators.size()) {
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(cost->line) + ": mpc.gencost has " +
                                               std::to_string(cost->rows.size()) + " rows for " +
                                               std::to_string(grid.generators.size()) + " generators");
    }
    for (std::size_t i = 0; i < grid.generators.size(); ++i) {
      const auto& row = cost->rows[i];
      const auto& v = row.values;
      if (v.size() < 4 || as_int(v[0], row.line) != 2) {
        throw Error(ErrorCode::MalformedRow,
                    "line " + std::to_string(row.line) + ": only polynomial (model 2) gencost rows are supported");
      }
      const int ncost = as_int(v[3], row.line);
      if (ncost < 1 || ncost > 3 || v.size() < 4 + static_cast<std::size_t>(ncost)) {
        throw Error(ErrorCode::MalformedRow,
                    "line " + std::to_string(row.line) + ": gencost needs 1 to 3 polynomial coefficients");
      }
      GenCost c{0.0, 0.0, 0.0};
      const double* coef = v.data() + 4;
      if (ncost == 3) c = {coef[0], coef[1], coef[2]};
      if (ncost == 2) c = {0.0, coef[0], coef[1]};
      if (ncost == 1) c = {0.0, 0.0, coef[0]};
      grid.gencost.push_back(c);
    }
  } else {
    grid.gencost.assign(grid.generators.size(), GenCost{0.0, 1.0, 0.0});
  }

  validate(grid);
  return grid;
}

std::string write_matpower_case(const GridCase& grid) {
  std::ostringstream os;
  auto n = [](double v) { return format_number(v); };
  os << "function mpc = " << grid.name << "\n";
  os << "mpc.version = '2';\n";
  os << "mpc.baseMVA = " << n(grid.base_mva) << ";\n\n";
  os << "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin\n";
  os << "mpc.bus = [\n";
  for (const auto& b : grid.buses) {
    os << '\t' << b.id << '\t' << static_cast<int>(b.type) << '\t' << n(b.pd) << '\t' << n(b.qd) << '\t'
       << n(b.gs) << '\t' << n(b.bs) << "\t1\t" << n(b.vm) << '\t' << n(b.va) << "\t0\t1\t" << n(b.vmax)
       << '\t' << n(b.vmin) << ";\n";
  }
  os << "];\n\n";
  os << "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin\n";
  os << "mpc.gen = [\n";
  for (const auto& g : grid.generators) {
    os << '\t' << g.bus << '\t' << n(g.pg) << '\t' << n(g.qg) << '\t' << n(g.qmax) << '\t' << n(g.qmin)
       << '\t' << n(g.vg) << '\t' << n(grid.base_mva) << '\t' << (g.in_service ? 1 : 0) << '\t' << n(g.pmax)
       << '\t' << n(g.pmin) << ";\n";
  }
  os << "];\n\n";
  os << "%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax\n";
  os << "mpc.branch = [\n";
  for (const auto& br : grid.branches) {
    os << '\t' << br.from << '\t' << br.to << '\t' << n(br.r) << '\t' << n(br.x) << '\t' << n(br.b) << '\t'
       << n(br.rate) << "\t0\t0\t0\t0\t" << (br.in_service ? 1 : 0) << "\t-360\t360;\n";
  }
  os << "];\n\n";
  os << "%% 2 startup shutdown n c2 c1 c0\n";
  os << "mpc.gencost = [\n";
  for (const auto& c : grid.gencost) {
    os << "\t2\t0\t0\t3\t" << n(c.alpha) << '\t' << n(c.beta) << '\t' << n(c.lambda) << ";\n";
  }
  os << "];\n";
  return os.str();
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GridCase load_matpower_case(const std::string& path) { return parse_matpower_case(read_text_file(path)); }

std::vector<Section> load_section_config(std::string_view text, const GridCase& grid) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedConfig, e.what());
  }
  if (!doc.is_object() || !doc.contains("sections") || !doc["sections"].is_array()) {
    throw Error(ErrorCode::MalformedConfig, "expected an object with a 'sections' array");
  }
  if (doc.contains("version") && doc["version"] != 1) {
    throw Error(ErrorCode::MalformedConfig, "unsupported section config version " + doc["version"].dump());
  }

  std::vector<Section> out;
  for (const auto& entry : doc["sections"]) {
    Section s;
    try {
      s.id = entry.at("id").get<int>();
      for (const auto& line : entry.at("lines")) {
        if (!line.is_array() || line.size() != 2) {
          throw Error(ErrorCode::MalformedConfig,
                      "section " + std::to_string(s.id) + ": lines must be [from, to] pairs");
        }
        s.lines.emplace_back(line[0].get<int>(), line[1].get<int>());
      }
      s.p_min = entry.at("p_min").get<double>();
      s.p_max = entry.at("p_max").get<double>();
      if (entry.contains("q_min")) s.q_min = entry["q_min"].get<double>();
      if (entry.contains("q_max")) s.q_max = entry["q_max"].get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedConfig, "section entry: " + std::string(e.what()));
    }
    if (s.lines.empty()) throw Error(ErrorCode::EmptySection, "section " + std::to_string(s.id) + " has no lines");
    if (!(s.p_min < s.p_max)) {
      throw Error(ErrorCode::InvertedBounds, "section " + std::to_string(s.id) + ": p_min " +
                                                 format_number(s.p_min) + " >= p_max " + format_number(s.p_max));
    }
    if (s.q_min && s.q_max && !(*s.q_min < *s.q_max)) {
      throw Error(ErrorCode::InvertedBounds, "section " + std::to_string(s.id) + ": q_min >= q_max");
    }
    for (const auto& [f, t] : s.lines) {
      int match = -1;
      int sign = 0;
      int count = 0;
      for (std::size_t i = 0; i < grid.branches.size(); ++i) {
        const auto& br = grid.branches[i];
        if (br.from == f && br.to == t) {
          match = static_cast<int>(i);
          sign = 1;
          ++count;
        } else if (br.from == t && br.to == f) {
          match = static_cast<int>(i);
          sign = -1;
          ++count;
        }
      }
      if (count == 0) {
        throw Error(ErrorCode::UnknownBranch, "section " + std::to_string(s.id) + ": line (" + std::to_string(f) +
                                                  ", " + std::to_string(t) + ") matches no branch");
      }
      if (count > 1) {
        throw Error(ErrorCode::AmbiguousBranch, "section " + std::to_string(s.id) + ": line (" +
                                                    std::to_string(f) + ", " + std::to_string(t) + ") matches " +
                                                    std::to_string(count) + " parallel branches");
      }
      s.branches.push_back(match);
      s.orientation.push_back(sign);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string write_section_config(const std::vector<Section>& sections) {
  nlohmann::ordered_json doc;
  doc["version"] = 1;
  doc["sections"] = nlohmann::ordered_json::array();
  for (const auto& s : sections) {
    nlohmann::ordered_json e;
    e["id"] = s.id;
    e["lines"] = nlohmann::ordered_json::array();
    for (const auto& [f, t] : s.lines) e["lines"].push_back({f, t});
    e["p_min"] = s.p_min;
    e["p_max"] = s.p_max;
    if (s.q_min) e["q_min"] = *s.q_min;
    if (s.q_max) e["q_max"] = *s.q_max;
    doc["sections"].push_back(e);
  }
  return doc.dump(2) + "\n";
}

PowerGraph build_graph(const GridCase& grid) {
  PowerGraph g;
  g.n = static_cast<int>(grid.buses.size());
  const auto order = grid.bus_order();
  for (std::size_t k = 0; k < order.size(); ++k) {
    g.node_index[grid.buses[static_cast<std::size_t>(order[k])].id] = static_cast<int>(k);
  }
  for (const auto& br : grid.branches) {
    if (!br.in_service) continue;
    int u = g.node_index.at(br.from);
    int v = g.node_index.at(br.to);
    if (u > v) std::swap(u, v);
    g.edge_list.emplace_back(u, v);
  }
  std::sort(g.edge_list.begin(), g.edge_list.end());
  return g;
}

Eigen::SparseMatrix<double> PowerGraph::adjacency() const {
  std::set<std::pair<int, int>> unique(edge_list.begin(), edge_list.end());
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(unique.size() * 2);
  for (const auto& [u, v] : unique) {
    triplets.emplace_back(u, v, 1.0);
    triplets.emplace_back(v, u, 1.0);
  }
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(triplets.begin(), triplets.end());
  return a;
}

}  // namespace powerformer
