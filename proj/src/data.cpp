#include "tabl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <tuple>

#include "tabl/errors.hpp"
#include "tabl/rng.hpp"

namespace tabl {

namespace {

constexpr std::size_t kNativeColumns = 2 + kLobFeatures + 3;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Splits on a single delimiter, or on runs of blanks when delim == ' '.
std::vector<std::string_view> tokenize(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  if (delim == ' ') {
    std::size_t pos = 0;
    while (true) {
      pos = line.find_first_not_of(" \t\r", pos);
      if (pos == std::string_view::npos) break;
      const auto end = line.find_first_of(" \t\r", pos);
      out.push_back(line.substr(pos, end == std::string_view::npos ? line.npos : end - pos));
      if (end == std::string_view::npos) break;
      pos = end;
    }
    return out;
  }
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::size_t pos = 0;
  while (true) {
    const auto end = line.find(delim, pos);
    out.push_back(line.substr(pos, end == std::string_view::npos ? line.npos : end - pos));
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return out;
}

double to_double(std::string_view tok, std::size_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": cannot read '" + std::string(tok) +
                     "' as a number");
  }
  return v;
}

int to_int(double v, std::size_t line_no, const char* what) {
  if (v != std::floor(v) || std::abs(v) > 1e9) {
    throw ParseError("line " + std::to_string(line_no) + ": " + what + " " + fmt17(v) +
                     " is not an integer");
  }
  return static_cast<int>(v);
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    out.push_back(text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r") == std::string_view::npos; }

int direction(int regime) { return regime == 1 ? 1 : (regime == 2 ? -1 : 0); }

}  // namespace

std::string write_native_csv(std::span<const EventStream> streams) {
  std::set<std::size_t> horizons;
  for (const EventStream& s : streams)
    for (const auto& [h, labels] : s.provided_labels) horizons.insert(h);
  std::string out = "stock_id,day";
  for (std::size_t f = 0; f < kLobFeatures; ++f) out += ",f" + std::to_string(f);
  out += ",raw_best_ask,raw_best_bid,mid";
  for (std::size_t h : horizons) out += ",label_h" + std::to_string(h);
  out += "\n";
  for (const EventStream& s : streams) {
    for (std::size_t i = 0; i < s.events.size(); ++i) {
      const LobEvent& e = s.events[i];
      out += std::to_string(s.stock) + "," + std::to_string(s.day);
      for (double v : e.features) out += "," + fmt17(v);
      out += "," + fmt17(e.best_ask) + "," + fmt17(e.best_bid) + "," + fmt17(e.mid);
      for (std::size_t h : horizons) {
        const auto it = s.provided_labels.find(h);
        const int label = it != s.provided_labels.end() && i < it->second.size() ? it->second[i] : -1;
        out += "," + std::to_string(label);
      }
      out += "\n";
    }
  }
  return out;
}

std::vector<EventStream> read_native_csv(std::string_view text) {
  std::vector<EventStream> streams;
  const auto lines = lines_of(text);
  if (lines.empty() || blank(lines[0])) return streams;
  const auto header = tokenize(lines[0], ',');
  if (header.size() < kNativeColumns) {
    throw ParseError("line 1: native header must have at least " + std::to_string(kNativeColumns) +
                     " columns");
  }
  std::vector<std::size_t> horizons;
  for (std::size_t c = kNativeColumns; c < header.size(); ++c) {
    const std::string_view name = header[c];
    std::size_t h = 0;
    const bool prefixed = name.starts_with("label_h");
    const auto [ptr, ec] = prefixed ? std::from_chars(name.data() + 7, name.data() + name.size(), h)
                                    : std::from_chars_result{name.data(), std::errc::invalid_argument};
    if (!prefixed || ec != std::errc() || ptr != name.data() + name.size() || h == 0) {
      throw ParseError("line 1: unexpected column '" + std::string(name) + "'");
    }
    horizons.push_back(h);
  }
  const std::size_t columns = header.size();
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    const std::size_t line_no = i + 1;
    const auto tok = tokenize(lines[i], ',');
    if (tok.size() != columns) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                       " columns, found " + std::to_string(tok.size()));
    }
    const int stock = to_int(to_double(tok[0], line_no), line_no, "stock id");
    const int day = to_int(to_double(tok[1], line_no), line_no, "day");
    LobEvent e;
    for (std::size_t f = 0; f < kLobFeatures; ++f) e.features[f] = to_double(tok[2 + f], line_no);
    e.best_ask = to_double(tok[2 + kLobFeatures], line_no);
    e.best_bid = to_double(tok[3 + kLobFeatures], line_no);
    e.mid = to_double(tok[4 + kLobFeatures], line_no);
    if (e.best_ask < e.best_bid) {
      throw ParseError("line " + std::to_string(line_no) + ": best ask below best bid");
    }
    if (streams.empty() || streams.back().stock != stock || streams.back().day != day) {
      streams.push_back(EventStream{stock, day, {}, {}});
    }
    streams.back().events.push_back(e);
    for (std::size_t k = 0; k < horizons.size(); ++k) {
      const int label = to_int(to_double(tok[kNativeColumns + k], line_no), line_no, "label");
      if (label < -1 || label > 2) {
        throw ParseError("line " + std::to_string(line_no) + ": label must be -1, 0, 1 or 2");
      }
      streams.back().provided_labels[horizons[k]].push_back(label);
    }
  }
  return streams;
}

Fi2010Layout Fi2010Layout::from_config(const KeyValueConfig& cfg) {
  cfg.reject_unknown({"orientation", "delimiter", "feature_offset", "label.*", "label_codes",
                      "stock_index", "day_index", "best_ask_index", "best_bid_index",
                      "segments"});
  Fi2010Layout l;
  const std::string orientation = cfg.require("orientation");
  if (orientation == "columns") l.events_are_columns = true;
  else if (orientation == "rows") l.events_are_columns = false;
  else throw ConfigError("orientation must be 'columns' or 'rows', got '" + orientation + "'");
  const std::string delim = cfg.get_string("delimiter", "whitespace");
  if (delim == "comma") l.comma_delimited = true;
  else if (delim != "whitespace") throw ConfigError("delimiter must be 'whitespace' or 'comma'");
  cfg.require("feature_offset");
  l.feature_offset = cfg.get_uint("feature_offset", 0);
  for (const auto& [key, value] : cfg.entries()) {
    if (key.rfind("label.", 0) != 0) continue;
    const auto h = parse_uint_list(key.substr(6));
    if (h.size() != 1 || h[0] == 0) throw ConfigError("bad label horizon key '" + key + "'");
    l.label_index[h[0]] = cfg.get_uint(key, 0);
  }
  if (cfg.has("label_codes")) {
    const auto codes = cfg.get_list("label_codes");
    if (codes.size() != 3) throw ConfigError("label_codes needs three values");
    for (std::size_t c = 0; c < 3; ++c) {
      const std::string& v = codes[c];
      auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), l.label_codes[c]);
      if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("label_codes entry '" + v + "' is not an integer");
      }
    }
  }
  if (cfg.has("stock_index")) l.stock_index = cfg.get_uint("stock_index", 0);
  if (cfg.has("day_index")) l.day_index = cfg.get_uint("day_index", 0);
  l.best_ask_index = cfg.get_uint("best_ask_index", l.feature_offset);
  l.best_bid_index = cfg.get_uint("best_bid_index", l.feature_offset + 2);
  for (const std::string& seg : cfg.get_list("segments")) {
    const auto parts = tokenize(seg, ':');
    if (parts.size() != 3) throw ConfigError("segment '" + seg + "' must be stock:day:count");
    const auto nums = parse_uint_list(std::string(parts[0]) + "," + std::string(parts[1]) + "," +
                                      std::string(parts[2]));
    l.segments.push_back({static_cast<int>(nums[0]), static_cast<int>(nums[1]), nums[2]});
  }
  return l;
}

std::vector<EventStream> load_fi2010(std::string_view text, const Fi2010Layout& layout) {
  // Read the whole numeric table first: rows of tokens.
  const char delim = layout.comma_delimited ? ',' : ' ';
  std::vector<std::vector<double>> table;
  std::vector<std::size_t> line_numbers;
  const auto lines = lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    std::vector<double> row;
    for (auto tok : tokenize(lines[i], delim)) row.push_back(to_double(tok, i + 1));
    if (!table.empty() && row.size() != table.front().size()) {
      throw ParseError("line " + std::to_string(i + 1) + ": " + std::to_string(row.size()) +
                       " values, expected " + std::to_string(table.front().size()));
    }
    table.push_back(std::move(row));
    line_numbers.push_back(i + 1);
  }
  std::vector<EventStream> streams;
  if (table.empty()) return streams;

  const std::size_t n_events = layout.events_are_columns ? table.front().size() : table.size();
  const std::size_t n_fields = layout.events_are_columns ? table.size() : table.front().size();
  auto field = [&](std::size_t event, std::size_t f) {
    return layout.events_are_columns ? table[f][event] : table[event][f];
  };
  auto line_of = [&](std::size_t event, std::size_t f) {
    return layout.events_are_columns ? line_numbers[f] : line_numbers[event];
  };
  auto need = [&](std::size_t idx, const std::string& what) {
    if (idx >= n_fields) {
      throw ConfigError(what + " index " + std::to_string(idx) + " is beyond the " +
                        std::to_string(n_fields) + " available fields");
    }
  };
  need(layout.feature_offset + kLobFeatures - 1, "feature");
  need(layout.best_ask_index, "best ask");
  need(layout.best_bid_index, "best bid");
  for (const auto& [h, idx] : layout.label_index) need(idx, "label." + std::to_string(h));
  if (layout.stock_index) need(*layout.stock_index, "stock");
  if (layout.day_index) need(*layout.day_index, "day");

  std::vector<std::pair<int, int>> ids(n_events, {1, 0});
  if (!layout.segments.empty()) {
    std::size_t pos = 0;
    for (const auto& seg : layout.segments) {
      for (std::size_t k = 0; k < seg.count && pos + k < n_events; ++k) ids[pos + k] = {seg.stock, seg.day};
      pos += seg.count;
    }
    if (pos != n_events) {
      throw ConfigError("segments cover " + std::to_string(pos) + " events, file has " +
                        std::to_string(n_events));
    }
  }
  for (std::size_t e = 0; e < n_events; ++e) {
    if (layout.stock_index) ids[e].first = to_int(field(e, *layout.stock_index), line_of(e, *layout.stock_index), "stock id");
    if (layout.day_index) ids[e].second = to_int(field(e, *layout.day_index), line_of(e, *layout.day_index), "day");
    LobEvent ev;
    for (std::size_t f = 0; f < kLobFeatures; ++f) ev.features[f] = field(e, layout.feature_offset + f);
    ev.best_ask = field(e, layout.best_ask_index);
    ev.best_bid = field(e, layout.best_bid_index);
    ev.mid = 0.5 * (ev.best_ask + ev.best_bid);
    if (streams.empty() || streams.back().stock != ids[e].first || streams.back().day != ids[e].second) {
      streams.push_back(EventStream{ids[e].first, ids[e].second, {}, {}});
    }
    EventStream& s = streams.back();
    s.events.push_back(ev);
    for (const auto& [h, idx] : layout.label_index) {
      const double raw = field(e, idx);
      int label = -1;
      for (int c = 0; c < 3; ++c)
        if (raw == layout.label_codes[c]) label = c;
      if (label < 0) {
        throw ParseError("line " + std::to_string(line_of(e, idx)) + ": label code " + fmt17(raw) +
                         " is not one of the configured codes");
      }
      s.provided_labels[h].push_back(label);
    }
  }
  return streams;
}

ZScoreStats zscore_fit(std::span<const EventStream> streams) {
  ZScoreStats st;
  std::size_t n = 0;
  for (const EventStream& s : streams) {
    for (const LobEvent& e : s.events) {
      for (std::size_t f = 0; f < kLobFeatures; ++f) st.mean[f] += e.features[f];
      ++n;
    }
  }
  if (n == 0) throw DomainError("cannot fit z-score statistics on zero events");
  for (double& m : st.mean) m /= static_cast<double>(n);
  for (const EventStream& s : streams) {
    for (const LobEvent& e : s.events) {
      for (std::size_t f = 0; f < kLobFeatures; ++f) {
        const double d = e.features[f] - st.mean[f];
        st.std[f] += d * d;
      }
    }
  }
  for (double& v : st.std) v = std::max(std::sqrt(v / static_cast<double>(n)), kStdFloor);
  return st;
}

std::vector<EventStream> zscore_apply(const ZScoreStats& stats,
                                      std::span<const EventStream> streams) {
  std::vector<EventStream> out(streams.begin(), streams.end());
  for (EventStream& s : out) {
    for (LobEvent& e : s.events) {
      for (std::size_t f = 0; f < kLobFeatures; ++f)
        e.features[f] = (e.features[f] - stats.mean[f]) / stats.std[f];
    }
  }
  return out;
}

std::vector<int> label_events(std::span<const double> mids, std::size_t horizon, double theta) {
  if (horizon == 0) throw DomainError("prediction horizon must be positive");
  std::vector<int> labels(mids.size(), -1);
  for (std::size_t t = 0; t + horizon < mids.size(); ++t) {
    double mean = 0.0;
    for (std::size_t k = 1; k <= horizon; ++k) mean += mids[t + k];
    mean /= static_cast<double>(horizon);
    const double change = mean / mids[t] - 1.0;
    labels[t] = change > theta ? 1 : (change < -theta ? 2 : 0);
  }
  return labels;
}

void SampleSet::append(const SampleSet& other) {
  xs.insert(xs.end(), other.xs.begin(), other.xs.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  meta.insert(meta.end(), other.meta.begin(), other.meta.end());
}

std::array<std::uint64_t, 3> SampleSet::class_counts() const {
  std::array<std::uint64_t, 3> c{};
  for (int l : labels) ++c[static_cast<std::size_t>(l)];
  return c;
}

SampleSet make_windows(const EventStream& stream, const WindowConfig& cfg) {
  if (cfg.t == 0) throw DomainError("window length must be positive");
  const std::size_t n = stream.events.size();
  std::vector<int> labels;
  if (auto it = stream.provided_labels.find(cfg.horizon); it != stream.provided_labels.end()) {
    labels = it->second;
  } else {
    std::vector<double> mids(n);
    for (std::size_t i = 0; i < n; ++i) mids[i] = stream.events[i].mid;
    labels = label_events(mids, cfg.horizon, cfg.theta);
  }
  SampleSet out;
  for (std::size_t e = cfg.t - 1; e < n; ++e) {
    if (labels[e] < 0) continue;
    Matrix x(kLobFeatures, cfg.t);
    for (std::size_t j = 0; j < cfg.t; ++j) {
      const LobEvent& ev = stream.events[e + 1 - cfg.t + j];
      for (std::size_t f = 0; f < kLobFeatures; ++f) x(f, j) = ev.features[f];
    }
    out.xs.push_back(std::move(x));
    out.labels.push_back(labels[e]);
    out.meta.push_back({stream.stock, stream.day, e, stream.events[e].best_ask,
                        stream.events[e].best_bid});
  }
  return out;
}

SampleSet make_windows(std::span<const EventStream> streams, const WindowConfig& cfg) {
  SampleSet out;
  for (const EventStream& s : streams) out.append(make_windows(s, cfg));
  return out;
}

namespace {

DatasetSplit split_with_stats(const ZScoreStats& stats, std::span<const EventStream> train_streams,
                              std::span<const EventStream> test_streams, const WindowConfig& cfg,
                              double val_fraction) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw DomainError("validation fraction must be in [0, 1)");
  }
  DatasetSplit split;
  split.stats = stats;
  std::vector<EventStream> train = zscore_apply(stats, train_streams);
  std::stable_sort(train.begin(), train.end(), [](const EventStream& a, const EventStream& b) {
    return std::tie(a.stock, a.day) < std::tie(b.stock, b.day);
  });
  std::size_t i = 0;
  while (i < train.size()) {
    std::size_t j = i;
    SampleSet stock;
    while (j < train.size() && train[j].stock == train[i].stock) stock.append(make_windows(train[j++], cfg));
    const std::size_t n_val =
        static_cast<std::size_t>(std::floor(static_cast<double>(stock.size()) * val_fraction));
    const std::size_t cut = stock.size() - n_val;
    for (std::size_t k = 0; k < stock.size(); ++k) {
      SampleSet& dst = k < cut ? split.train : split.val;
      dst.xs.push_back(std::move(stock.xs[k]));
      dst.labels.push_back(stock.labels[k]);
      dst.meta.push_back(stock.meta[k]);
    }
    i = j;
  }
  split.test = make_windows(zscore_apply(stats, test_streams), cfg);
  return split;
}

}  // namespace

DatasetSplit make_split(std::span<const EventStream> train_streams,
                        std::span<const EventStream> test_streams, const WindowConfig& cfg,
                        double val_fraction) {
  return split_with_stats(zscore_fit(train_streams), train_streams, test_streams, cfg, val_fraction);
}

std::vector<EventStream> select(std::span<const EventStream> streams, const std::set<int>& stocks,
                                DayRange days) {
  std::vector<EventStream> out;
  for (const EventStream& s : streams)
    if (stocks.count(s.stock) && days.contains(s.day)) out.push_back(s);
  return out;
}

std::set<int> stock_ids(std::span<const EventStream> streams) {
  std::set<int> ids;
  for (const EventStream& s : streams) ids.insert(s.stock);
  return ids;
}

int max_day(std::span<const EventStream> streams) {
  int d = 0;
  for (const EventStream& s : streams) d = std::max(d, s.day);
  return d;
}

Setup1Split split_setup1(std::span<const EventStream> streams, int target, int train_last_day,
                         const WindowConfig& cfg) {
  const std::set<int> all = stock_ids(streams);
  if (!all.count(target)) throw ConfigError("target stock " + std::to_string(target) + " not in data");
  if (all.size() < 2) throw ConfigError("setup 1 needs at least two stocks");
  Setup1Split out;
  out.target = target;
  out.old_stocks = all;
  out.old_stocks.erase(target);
  const DayRange train{0, train_last_day}, test{train_last_day + 1, max_day(streams)};
  out.old_data = make_split(select(streams, out.old_stocks, train), select(streams, out.old_stocks, test), cfg);
  out.new_data = make_split(select(streams, {target}, train), select(streams, {target}, test), cfg);
  out.joint = make_split(select(streams, all, train), select(streams, all, test), cfg);
  return out;
}

Setup2Split split_setup2(std::span<const EventStream> streams, const std::set<int>& old_stocks,
                         const std::set<int>& new_stocks, int train_last_day,
                         const WindowConfig& cfg) {
  if (new_stocks.empty()) throw ConfigError("setup 2 needs at least one new stock");
  if (old_stocks.empty()) throw ConfigError("setup 2 needs at least one old stock");
  const std::set<int> all = stock_ids(streams);
  for (int s : old_stocks)
    if (!all.count(s)) throw ConfigError("old stock " + std::to_string(s) + " not in data");
  for (int s : new_stocks) {
    if (!all.count(s)) throw ConfigError("new stock " + std::to_string(s) + " not in data");
    if (old_stocks.count(s)) throw ConfigError("stock " + std::to_string(s) + " is both old and new");
  }
  Setup2Split out;
  out.old_stocks = old_stocks;
  const DayRange train{0, train_last_day}, test{train_last_day + 1, max_day(streams)};
  out.old_data = make_split(select(streams, old_stocks, train), select(streams, old_stocks, test), cfg);
  for (int s : new_stocks)
    out.new_data.emplace_back(s, make_split(select(streams, {s}, train), select(streams, {s}, test), cfg));
  return out;
}

OnlineSplit split_online(std::span<const EventStream> streams, DayRange base_days,
                         DayRange adapt_days, DayRange test_days, const WindowConfig& cfg) {
  const std::set<int> all = stock_ids(streams);
  const std::vector<EventStream> base = select(streams, all, base_days);
  const std::vector<EventStream> adapt = select(streams, all, adapt_days);
  const std::vector<EventStream> test = select(streams, all, test_days);
  if (base.empty() || adapt.empty() || test.empty()) {
    throw ConfigError("online split: every day block must contain events");
  }
  // The deployed base fixes the normalization; adaptation data reuses it.
  const ZScoreStats stats = zscore_fit(base);
  OnlineSplit out;
  out.base = split_with_stats(stats, base, test, cfg, 0.1);
  out.adapt = split_with_stats(stats, adapt, test, cfg, 0.1);
  return out;
}

std::vector<EventStream> generate_synthetic(const SyntheticLobConfig& cfg) {
  if (cfg.stocks == 0 || cfg.days == 0 || cfg.events_per_day == 0) {
    throw DomainError("synthetic generator needs positive stock, day and event counts");
  }
  if (!(cfg.regime_stay >= 0.0 && cfg.regime_stay <= 1.0)) {
    throw DomainError("regime_stay must be a probability");
  }
  if (cfg.volatility < 0.0 || cfg.spread < 0.0 || cfg.tick < 0.0 || cfg.volume_scale <= 0.0) {
    throw DomainError("synthetic scales must be non-negative (volume scale positive)");
  }
  std::vector<EventStream> streams;
  const std::size_t total = cfg.days * cfg.events_per_day;
  for (std::size_t s = 0; s < cfg.stocks; ++s) {
    Rng rng(derive_seed(cfg.seed, s));
    std::vector<int> regime(total + cfg.signal_lead);
    int r = static_cast<int>(rng.below(3));
    for (int& v : regime) {
      if (rng.uniform() >= cfg.regime_stay) r = (r + 1 + static_cast<int>(rng.below(2))) % 3;
      v = r;
    }
    const std::size_t lv[2] = {(2 * s) % kLobLevels, (2 * s + 1) % kLobLevels};
    double log_mid = std::log(50.0 + 25.0 * static_cast<double>(s));
    for (std::size_t d = 0; d < cfg.days; ++d) {
      EventStream stream{static_cast<int>(s) + 1, static_cast<int>(d), {}, {}};
      stream.events.reserve(cfg.events_per_day);
      const double flip = (cfg.drift_day >= 0 && static_cast<int>(d) >= cfg.drift_day) ? -1.0 : 1.0;
      for (std::size_t k = 0; k < cfg.events_per_day; ++k) {
        const std::size_t t = d * cfg.events_per_day + k;
        log_mid += cfg.drift * direction(regime[t]) + cfg.volatility * rng.normal();
        const double mid = std::exp(log_mid);
        const double half_spread = 0.5 * mid * cfg.spread * (1.0 + 0.5 * rng.uniform());
        const double signal = flip * direction(regime[t + cfg.signal_lead]);
        LobEvent e;
        for (std::size_t l = 0; l < kLobLevels; ++l) {
          const double offset = half_spread + static_cast<double>(l) * cfg.tick * mid;
          double ask_v = cfg.volume_scale * std::exp(cfg.volume_noise * rng.normal());
          double bid_v = cfg.volume_scale * std::exp(cfg.volume_noise * rng.normal());
          if (l == lv[0] || l == lv[1]) {
            bid_v *= std::exp(cfg.signal_strength * signal);
            ask_v *= std::exp(-cfg.signal_strength * signal);
          }
          e.features[4 * l] = mid + offset;
          e.features[4 * l + 1] = ask_v;
          e.features[4 * l + 2] = mid - offset;
          e.features[4 * l + 3] = bid_v;
        }
        e.best_ask = e.features[0];
        e.best_bid = e.features[2];
        e.mid = 0.5 * (e.best_ask + e.best_bid);
        stream.events.push_back(e);
      }
      streams.push_back(std::move(stream));
    }
  }
  if (cfg.check_balance) {
    std::array<std::uint64_t, 3> counts{};
    for (const EventStream& st : streams) {
      std::vector<double> mids;
      for (const LobEvent& e : st.events) mids.push_back(e.mid);
      for (int l : label_events(mids, cfg.labels.horizon, cfg.labels.theta))
        if (l >= 0) ++counts[static_cast<std::size_t>(l)];
    }
    const double n = static_cast<double>(counts[0] + counts[1] + counts[2]);
    for (std::size_t c = 0; c < 3; ++c) {
      if (n == 0.0 || static_cast<double>(counts[c]) < 0.05 * n) {
        throw DomainError("synthetic config gives class " + std::to_string(c) + " only " +
                          std::to_string(counts[c]) + " of " + std::to_string(static_cast<std::uint64_t>(n)) +
                          " labels (< 5%)");
      }
    }
  }
  return streams;
}

std::string class_distribution_csv(
    const std::vector<std::tuple<std::string, std::string, std::array<std::uint64_t, 3>>>& rows) {
  std::string out = "stock,split,class0,class1,class2\n";
  for (const auto& [stock, split, c] : rows) {
    out += stock + "," + split + "," + std::to_string(c[0]) + "," + std::to_string(c[1]) + "," +
           std::to_string(c[2]) + "\n";
  }
  return out;
}

}  // namespace tabl
