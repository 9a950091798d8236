#pragma once

// Small probabilistic news grammar used to produce desk-scale corpora.
//
// A register is a style: which connectives, reporting verbs, adjectives,
// places and sentence shapes are preferred. "human" imitates wire copy with
// datelines; "machine-*" registers lean on the stock phrasing of assistant
// models, each with its own tells; "shifted" is human text from a different
// outlet and domain (regional UK news), for generalization checks.

#include <array>
#include <cctype>
#include <string>
#include <utility>
#include <vector>

#include "mgtbench/corpus.hpp"
#include "mgtbench/encoder.hpp"
#include "mgtbench/random.hpp"

namespace mgtbench::synth {

using Choices = std::vector<std::pair<std::string, double>>;

struct Register {
  std::string name;
  Choices connective;   // sentence openers, "" for none
  Choices said;         // reporting verbs
  Choices adjective;
  Choices place;
  Choices people;
  Choices time;
  Choices closer;       // trailing clauses
  std::vector<std::pair<int, double>> shapes;  // sentence template ids with weights
  double header_probability = 0.0;
  std::string outlet = "CNN";
};

namespace detail {

inline const std::string& pick(const Choices& c, Rng& rng) {
  std::vector<double> w;
  w.reserve(c.size());
  for (const auto& [_, x] : c) w.push_back(x);
  return c[rng.categorical(w)].first;
}

inline const std::string& pick(const std::vector<std::string>& c, Rng& rng) { return c[rng.below(c.size())]; }

inline Choices flat(std::initializer_list<const char*> words, double w = 1.0) {
  Choices c;
  for (const char* s : words) c.emplace_back(s, w);
  return c;
}

inline Choices concat(Choices a, const Choices& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

struct Topic {
  std::vector<std::string> nouns;
  std::vector<std::string> verbs_past;
  std::vector<std::string> verbs_future;
  std::vector<std::string> roles;
};

inline const std::vector<Topic>& topics() {
  static const std::vector<Topic> t = {
      {{"budget", "bill", "election", "reform", "vote", "policy", "campaign", "proposal", "tax plan", "inquiry"},
       {"approved", "rejected", "debated", "delayed", "backed", "blocked", "announced"},
       {"pass", "fail", "stall", "move forward", "face a vote", "be revised"},
       {"senator", "spokesman", "party official", "adviser", "lawmaker"}},
      {{"markets", "prices", "jobs report", "inflation", "growth", "exports", "shares", "wages", "interest rates"},
       {"rose", "fell", "slipped", "jumped", "recovered", "stalled", "surged"},
       {"rise", "fall", "recover", "slow", "pick up", "level off"},
       {"economist", "trader", "analyst", "chief executive", "banker"}},
      {{"storm", "flooding", "heat wave", "rainfall", "winds", "drought", "wildfire", "snowfall"},
       {"hit", "battered", "swept through", "damaged", "eased", "spread across"},
       {"strengthen", "weaken", "reach the coast", "continue", "spread"},
       {"forecaster", "fire chief", "emergency manager", "resident", "meteorologist"}},
      {{"study", "vaccine", "trial", "data", "experiment", "satellite", "findings", "treatment"},
       {"showed", "suggested", "revealed", "confirmed", "questioned", "launched"},
       {"help", "change practice", "be published", "expand", "need more work"},
       {"researcher", "professor", "doctor", "scientist", "lead author"}},
      {{"investigation", "suspect", "case", "charges", "court hearing", "arrest", "shooting", "robbery"},
       {"charged", "arrested", "identified", "released", "detained", "questioned"},
       {"appear in court", "continue", "be reviewed", "go to trial", "widen"},
       {"detective", "police chief", "prosecutor", "lawyer", "witness"}},
  };
  return t;
}

inline const std::vector<std::string>& first_names() {
  static const std::vector<std::string> v = {"John", "Maria", "David", "Susan", "Ahmed", "Linda", "Carlos", "Emily",
                                             "Robert", "Grace", "Daniel", "Helen", "Kevin", "Rachel", "Peter", "Nina"};
  return v;
}

inline const std::vector<std::string>& last_names() {
  static const std::vector<std::string> v = {"Smith", "Johnson", "Lee", "Brown", "Garcia", "Miller", "Davis", "Wilson",
                                             "Clark", "Lewis", "Walker", "Young", "Hall", "Allen", "King", "Wright"};
  return v;
}

inline std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

inline std::string number(Rng& rng) {
  static const std::array<const char*, 12> n = {"two", "three", "five", "seven", "12", "15", "20", "30", "45", "100", "250", "several"};
  return n[rng.below(n.size())];
}

}  // namespace detail

inline Register human_register() {
  using detail::flat;
  Register r;
  r.name = "human";
  r.connective = detail::concat(flat({""}, 6.0), flat({"But", "And", "Still,", "Meanwhile,", "On Monday,", "Last year,"}));
  r.said = flat({"said", "told reporters", "said on Monday", "said in a statement", "told CNN", "added", "said Tuesday"});
  r.adjective = flat({"new", "big", "local", "key", "tough", "early", "latest", "small", "long"});
  r.place = flat({"Washington", "Atlanta", "Texas", "Chicago", "New York", "California", "Florida", "Ohio", "the city"});
  r.people = flat({"officials", "residents", "police", "lawmakers", "the mayor", "the governor", "investors", "critics"});
  r.time = flat({"on Monday", "on Tuesday", "last week", "this year", "on Friday", "overnight", "earlier this month"});
  r.closer = detail::concat(flat({""}, 5.0), flat({", according to officials", ", a spokesman said", ", records show"}));
  r.shapes = {{0, 3.0}, {1, 3.0}, {2, 3.0}, {3, 2.0}, {4, 2.0}, {5, 1.0}};
  r.header_probability = 0.6;
  return r;
}

// Assistant-style prose. `variant` in {a, b, c, chat, para} varies the tells
// so each stand-in generator has a recognizable style of its own.
inline Register machine_register(const std::string& variant) {
  using detail::flat;
  Register r = human_register();
  r.name = "machine-" + variant;
  r.header_probability = 0.0;
  Choices conn = flat({"Furthermore,", "Moreover,", "Additionally,", "In addition,", "Overall,", "Notably,"});
  Choices said = flat({"stated", "emphasized", "noted", "highlighted", "explained"});
  Choices adj = flat({"significant", "crucial", "notable", "substantial", "comprehensive", "pivotal", "ongoing"});
  Choices closer = flat({", highlighting the importance of the issue", ", underscoring the need for action",
                         ", reflecting broader trends", ", raising important questions"});
  if (variant == "b") {
    conn = flat({"However,", "Importantly,", "As a result,", "In particular,", "Consequently,"});
    said = flat({"indicated", "acknowledged", "pointed out", "remarked"});
    adj = flat({"unprecedented", "remarkable", "critical", "widespread", "complex"});
    closer = flat({", which remains a concern for many", ", as the situation continues to evolve",
                   ", marking a turning point"});
  } else if (variant == "c") {
    conn = flat({"In recent years,", "At the same time,", "Ultimately,", "Interestingly,", "To that end,"});
    said = flat({"asserted", "observed", "shared", "expressed"});
    adj = flat({"vital", "essential", "dynamic", "robust", "innovative"});
    closer = flat({", according to experts", ", in a move that surprised many", ", amid growing uncertainty"});
  } else if (variant == "para") {
    conn = flat({"In short,", "Put simply,", "Reportedly,", "By contrast,"});
    said = flat({"reported", "mentioned", "claimed"});
  }
  r.connective = detail::concat(flat({""}, 4.0), detail::concat(conn, r.connective));
  r.said = detail::concat(said, r.said);
  r.adjective = detail::concat(adj, r.adjective);
  r.closer = detail::concat(flat({""}, 4.0), closer);
  r.shapes = {{0, 3.0}, {1, 2.0}, {2, 1.0}, {3, 3.0}, {4, 1.0}, {5, 3.0}};
  return r;
}

// Regional UK news: different places, spelling and sentence habits.
inline Register shifted_register() {
  using detail::flat;
  Register r;
  r.name = "shifted";
  r.connective = detail::concat(flat({""}, 2.0), flat({"However,", "It comes after", "Last month,", "Meanwhile,",
                                                        "In addition,", "Overall,", "As a result,"}));
  r.said = flat({"said", "told the BBC", "said the council", "confirmed", "told BBC Scotland"});
  r.adjective = flat({"local", "former", "major", "regional", "new", "proposed", "significant", "crucial"});
  r.place = flat({"Cardiff", "Glasgow", "Belfast", "Leeds", "the Highlands", "Swansea", "Aberdeen", "Norfolk", "Devon"});
  r.people = flat({"councillors", "pupils", "MSPs", "campaigners", "the health board", "the club", "fans", "ministers"});
  r.time = flat({"on Saturday", "in the summer", "next year", "in 2015", "this autumn", "at the weekend"});
  r.closer = detail::concat(flat({""}, 4.0), flat({", the organisation said", ", it is understood", ", police said",
                                                    ", reflecting wider concerns"}));
  r.shapes = {{1, 2.0}, {2, 1.0}, {3, 2.0}, {4, 2.0}, {5, 2.0}, {6, 3.0}, {7, 2.0}};
  r.header_probability = 0.0;
  r.outlet = "BBC";
  return r;
}

inline Register register_by_name(const std::string& name) {
  if (name == "human") return human_register();
  if (name == "shifted") return shifted_register();
  if (name.rfind("machine-", 0) == 0) return machine_register(name.substr(8));
  throw ConfigError("unknown synthetic register '" + name + "'");
}

inline std::string sentence(const Register& r, const detail::Topic& t, Rng& rng) {
  using detail::pick;
  std::vector<double> w;
  for (const auto& [_, x] : r.shapes) w.push_back(x);
  const int shape = r.shapes[rng.categorical(w)].first;
  const std::string conn = pick(r.connective, rng);
  const std::string name = pick(detail::first_names(), rng) + " " + pick(detail::last_names(), rng);
  std::string s;
  switch (shape) {
    case 0:
      s = pick(r.people, rng) + " " + pick(r.said, rng) + " the " + pick(r.adjective, rng) + " " + pick(t.nouns, rng) +
          " would " + pick(t.verbs_future, rng) + " " + pick(r.time, rng);
      break;
    case 1:
      s = "the " + pick(r.adjective, rng) + " " + pick(t.nouns, rng) + " " + pick(t.verbs_past, rng) + " in " +
          pick(r.place, rng) + " " + pick(r.time, rng);
      break;
    case 2:
      s = "\"We are watching the " + pick(t.nouns, rng) + " very closely,\" " + name + ", a " + pick(t.roles, rng) +
          " in " + pick(r.place, rng) + ", " + pick(r.said, rng);
      break;
    case 3:
      s = "the " + pick(t.nouns, rng) + " comes as " + pick(r.people, rng) + " face " + pick(r.adjective, rng) +
          " pressure over the " + pick(t.nouns, rng);
      break;
    case 4:
      s = detail::number(rng) + " people were affected in " + pick(r.place, rng) + " " + pick(r.time, rng) + ", " +
          pick(r.people, rng) + " " + pick(r.said, rng);
      break;
    case 5:
      s = "this " + pick(r.adjective, rng) + " development could have a " + pick(r.adjective, rng) + " impact on the " +
          pick(t.nouns, rng) + " and " + pick(r.people, rng);
      break;
    case 6:
      s = name + ", from " + pick(r.place, rng) + ", " + pick(r.said, rng) + " the " + pick(t.nouns, rng) + " had been " +
          pick(t.verbs_past, rng) + " " + pick(r.time, rng);
      break;
    default:
      s = "a " + pick(t.roles, rng) + " for the " + pick(r.adjective, rng) + " " + pick(t.nouns, rng) + " " +
          pick(r.said, rng) + " it would " + pick(t.verbs_future, rng);
      break;
  }
  s += pick(r.closer, rng) + ".";
  if (!conn.empty()) return conn + " " + s;
  return detail::capitalize(s);
}

// One article of at least `min_chars` code points. Headers are datelines such
// as "ATLANTA, Georgia (CNN) -- ".
inline std::string article(const Register& r, Rng& rng, std::size_t min_chars = 900) {
  const auto& t = detail::topics()[rng.below(detail::topics().size())];
  std::string out;
  if (r.header_probability > 0.0 && rng.bernoulli(r.header_probability)) {
    static const std::vector<std::string> datelines = {"WASHINGTON", "ATLANTA, Georgia", "NEW YORK", "CHICAGO, Illinois",
                                                       "LOS ANGELES, California"};
    out = detail::pick(datelines, rng) + " (" + r.outlet + ") -- ";
  }
  std::string body;
  while (text::codepoint_count(body) < min_chars) {
    if (!body.empty()) body += " ";
    body += sentence(r, t, rng);
  }
  return out + body;
}

// `n` records with ids "{prefix}{i}".
inline std::vector<RawRecord> corpus(const Register& r, std::size_t n, std::uint64_t seed, const std::string& id_prefix = "a",
                                     std::size_t min_chars = 900) {
  Rng rng = Rng::derive(seed, "synth:" + r.name);
  std::vector<RawRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({id_prefix + std::to_string(i), article(r, rng, min_chars)});
  return out;
}

// Fill-gap probes from register text: one content word of a sentence masked.
struct ProbeRecord {
  std::string text_with_gap;
  std::string answer;
};

inline std::vector<ProbeRecord> probes(const Register& r, std::size_t n, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "synth-probes:" + r.name);
  std::vector<ProbeRecord> out;
  while (out.size() < n) {
    const auto& t = detail::topics()[rng.below(detail::topics().size())];
    auto words = text::split_words(sentence(r, t, rng));
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < words.size(); ++i) {
      const auto& w = words[i];
      if (w.size() >= 4 && std::isalpha(static_cast<unsigned char>(w.back()))) candidates.push_back(i);
    }
    if (candidates.empty()) continue;
    const std::size_t pos = candidates[rng.below(candidates.size())];
    std::string answer = words[pos];
    words[pos] = std::string(kMaskToken);
    out.push_back({text::join(words, " "), answer});
  }
  return out;
}

}  // namespace mgtbench::synth
