#include "iglab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "iglab/rng.hpp"

namespace iglab {

namespace {

using nlohmann::json;

const std::vector<std::string> kNames = {
    "alice", "brandon", "carla", "derek", "elena", "felix", "grace", "hugo", "irene",
    "jamal", "karen", "liam", "maya", "noah", "olga", "pedro", "quinn", "rosa",
    "sam", "tara", "umar", "vera", "wade", "xena", "yusuf", "zoe", "arthur",
    "bella", "carlos", "diana", "edgar", "fiona", "gavin", "hilda", "ivan", "julia"};

const std::vector<std::string> kOrgs = {
    "acme", "globex", "initech", "umbrella", "cyberdyne", "oscorp", "tyrell", "aperture",
    "hooli", "wonka", "monarch", "vandelay", "sterling", "nakatomi", "wayfarer", "zenith",
    "orbital", "pinnacle", "meridian", "quantex", "helix", "vertex", "solstice", "borealis"};

const std::vector<std::string> kCities = {
    "paris", "london", "berlin", "madrid", "rome", "vienna", "prague", "lisbon",
    "dublin", "oslo", "helsinki", "warsaw", "athens", "cairo", "tokyo", "osaka",
    "seoul", "delhi", "sydney", "toronto", "boston", "denver", "austin", "seattle"};

const std::vector<std::string> kTeams = {
    "falcons", "tigers", "wolves", "eagles", "sharks", "bears", "lions", "hawks",
    "panthers", "bulls", "rams", "colts", "jets", "kings", "suns", "spurs",
    "raptors", "pirates", "royals", "titans", "comets", "chiefs", "giants", "saints"};

const std::vector<std::string> kEvents = {
    "final", "opener", "derby", "playoff", "semifinal", "qualifier",
    "friendly", "rematch", "showdown", "classic", "tournament", "exhibition"};

const std::vector<std::string> kItems = {
    "lamp", "bicycle", "telescope", "guitar", "printer", "sofa", "camera", "drone",
    "keyboard", "toaster", "heater", "monitor", "backpack", "watch", "helmet", "scooter"};

// things may be two tokens so some gold spans exercise the end head
const std::vector<std::vector<std::string>> kThings = {
    {"bridge"}, {"tower"}, {"library"}, {"stadium"}, {"museum"}, {"harbor"},
    {"tunnel"}, {"windmill"}, {"observatory"}, {"fountain"}, {"lighthouse"},
    {"clock", "tower"}, {"concert", "hall"}, {"art", "museum"}, {"suspension", "bridge"}};

const std::vector<std::string> kAdjectives = {
    "famous", "young", "brilliant", "veteran", "local", "ambitious", "legendary", "humble"};

const std::vector<std::string> kAdverbs = {
    "quickly", "quietly", "recently", "finally", "easily", "eventually"};

const std::vector<std::string> kNumberWords = {"three", "seven", "twelve", "fifteen", "twenty"};

const std::unordered_set<std::string>& stopword_set() {
  static const std::unordered_set<std::string> s = {
      "a", "an", "the", "in", "on", "at", "of", "to", "for", "by", "with", "and",
      "or", "but", "did", "do", "does", "was", "were", "is", "are", "be", "been",
      "he", "she", "it", "they", "we", "you", "i", "his", "her", "its", "their",
      "this", "that", "these", "those", "from", "as", "not", "no", "so", "if",
      "then", "than", "who", "what", "when", "where", "how", "why", "which",
      "much", "many"};
  return s;
}

const std::unordered_set<std::string>& number_word_set() {
  static const std::unordered_set<std::string> s = {
      "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
      "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen",
      "seventeen", "eighteen", "nineteen", "twenty", "hundred", "thousand"};
  return s;
}

std::vector<std::string> make_numbers() {
  std::vector<std::string> out;
  for (int i = 2; i <= 60; ++i) out.push_back(std::to_string(i));
  for (const auto& w : kNumberWords) out.push_back(w);
  return out;
}

std::vector<std::string> make_years() {
  std::vector<std::string> out;
  for (int y = 1950; y <= 2009; ++y) out.push_back(std::to_string(y));
  return out;
}

const std::vector<std::string> kNumbers = make_numbers();
const std::vector<std::string> kYears = make_years();

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

enum class SentKind { founded, joined, scored, cost, built, won, traveled, hired };

const std::vector<SentKind> kNumericKinds = {SentKind::joined, SentKind::scored,
                                             SentKind::cost, SentKind::won};
const std::vector<SentKind> kAllKinds = {SentKind::founded, SentKind::joined, SentKind::scored,
                                         SentKind::cost,    SentKind::built,  SentKind::won,
                                         SentKind::traveled, SentKind::hired};

struct Sentence {
  std::vector<std::string> tokens;
  std::vector<TokenAnnotation> anns;
  SentKind kind;
  // filled slot values (only those the kind uses)
  std::string name, org, city, team, event, item;
  std::vector<std::string> thing;
  int answer_pos = -1;  // offset of the answer slot within the sentence
  int answer_len = 0;
};

// Draws distinct slot values within one passage.
struct SlotPool {
  std::set<std::string> used;

  std::string draw(Rng& rng, const std::vector<std::string>& list) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const std::string& w = list[rng.below(list.size())];
      if (used.insert(w).second) return w;
    }
    for (const auto& w : list)
      if (used.insert(w).second) return w;
    throw std::runtime_error("corpus generator: slot list exhausted");
  }

  std::vector<std::string> draw_thing(Rng& rng) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const auto& t = kThings[rng.below(kThings.size())];
      if (used.insert(t[0]).second) return t;
    }
    throw std::runtime_error("corpus generator: thing list exhausted");
  }
};

void push(Sentence& s, const std::string& tok, PosClass pos, bool numeric = false) {
  s.tokens.push_back(tok);
  s.anns.push_back({pos, numeric});
}

// answer_slot: which slot of the sentence the question will ask about
// ("" for filler sentences).
Sentence build_sentence(SentKind kind, Rng& rng, SlotPool& pool, const std::string& answer_slot) {
  Sentence s;
  s.kind = kind;
  auto mark_answer = [&](const std::string& slot, int len = 1) {
    if (slot == answer_slot) {
      s.answer_pos = static_cast<int>(s.tokens.size());
      s.answer_len = len;
    }
  };

  const bool adverb = rng.uniform() < 0.25;
  const bool adjective = rng.uniform() < 0.3;

  switch (kind) {
    case SentKind::founded:
      s.name = pool.draw(rng, kNames);
      s.org = pool.draw(rng, kOrgs);
      s.city = pool.draw(rng, kCities);
      mark_answer("name");
      push(s, s.name, PosClass::noun);
      if (adverb) push(s, rng.pick(kAdverbs), PosClass::adverb);
      push(s, "founded", PosClass::verb);
      push(s, s.org, PosClass::noun);
      push(s, "in", PosClass::stopword);
      mark_answer("city");
      push(s, s.city, PosClass::noun);
      break;

    case SentKind::joined:
      s.name = pool.draw(rng, kNames);
      s.org = pool.draw(rng, kOrgs);
      push(s, s.name, PosClass::noun);
      push(s, "joined", PosClass::verb);
      push(s, s.org, PosClass::noun);
      push(s, "in", PosClass::stopword);
      mark_answer("year");
      push(s, pool.draw(rng, kYears), PosClass::noun, true);
      break;

    case SentKind::scored:
      s.team = pool.draw(rng, kTeams);
      s.event = pool.draw(rng, kEvents);
      push(s, "the", PosClass::stopword);
      push(s, s.team, PosClass::noun);
      push(s, "scored", PosClass::verb);
      mark_answer("num");
      push(s, pool.draw(rng, kNumbers), PosClass::noun, true);
      push(s, "points", PosClass::noun);
      push(s, "in", PosClass::stopword);
      push(s, "the", PosClass::stopword);
      push(s, s.event, PosClass::noun);
      break;

    case SentKind::cost:
      s.item = pool.draw(rng, kItems);
      push(s, "the", PosClass::stopword);
      if (adjective) push(s, rng.pick(kAdjectives), PosClass::adjective);
      push(s, s.item, PosClass::noun);
      push(s, "cost", PosClass::verb);
      mark_answer("num");
      push(s, pool.draw(rng, kNumbers), PosClass::noun, true);
      push(s, "dollars", PosClass::noun);
      break;

    case SentKind::built:
      s.name = pool.draw(rng, kNames);
      s.city = pool.draw(rng, kCities);
      s.thing = pool.draw_thing(rng);
      push(s, s.name, PosClass::noun);
      push(s, "built", PosClass::verb);
      push(s, "the", PosClass::stopword);
      mark_answer("thing", static_cast<int>(s.thing.size()));
      for (const auto& t : s.thing) push(s, t, PosClass::noun);
      push(s, "in", PosClass::stopword);
      push(s, s.city, PosClass::noun);
      break;

    case SentKind::won:
      s.team = pool.draw(rng, kTeams);
      s.event = pool.draw(rng, kEvents);
      push(s, "the", PosClass::stopword);
      push(s, s.team, PosClass::noun);
      if (adverb) push(s, rng.pick(kAdverbs), PosClass::adverb);
      push(s, "won", PosClass::verb);
      push(s, "the", PosClass::stopword);
      push(s, s.event, PosClass::noun);
      push(s, "in", PosClass::stopword);
      mark_answer("year");
      push(s, pool.draw(rng, kYears), PosClass::noun, true);
      break;

    case SentKind::traveled:
      s.name = pool.draw(rng, kNames);
      push(s, s.name, PosClass::noun);
      if (adverb) push(s, rng.pick(kAdverbs), PosClass::adverb);
      push(s, "traveled", PosClass::verb);
      push(s, "to", PosClass::stopword);
      mark_answer("city");
      push(s, pool.draw(rng, kCities), PosClass::noun);
      s.city = s.tokens.back();
      break;

    case SentKind::hired:
      s.org = pool.draw(rng, kOrgs);
      s.city = pool.draw(rng, kCities);
      push(s, s.org, PosClass::noun);
      push(s, "hired", PosClass::verb);
      mark_answer("name");
      push(s, pool.draw(rng, kNames), PosClass::noun);
      s.name = s.tokens.back();
      push(s, "in", PosClass::stopword);
      push(s, s.city, PosClass::noun);
      break;
  }
  push(s, ".", PosClass::punct);
  return s;
}

struct QuestionPlan {
  SentKind kind;
  std::string answer_slot;
};

QuestionPlan plan_question(QuestionType type, Rng& rng) {
  switch (type) {
    case QuestionType::entity:
      return rng.uniform() < 0.5 ? QuestionPlan{SentKind::founded, "name"}
                                 : QuestionPlan{SentKind::hired, "name"};
    case QuestionType::where:
      return rng.uniform() < 0.5 ? QuestionPlan{SentKind::founded, "city"}
                                 : QuestionPlan{SentKind::traveled, "city"};
    case QuestionType::when:
      return rng.uniform() < 0.5 ? QuestionPlan{SentKind::joined, "year"}
                                 : QuestionPlan{SentKind::won, "year"};
    case QuestionType::quantifier:
      return rng.uniform() < 0.5 ? QuestionPlan{SentKind::scored, "num"}
                                 : QuestionPlan{SentKind::cost, "num"};
    case QuestionType::other:
      return QuestionPlan{SentKind::built, "thing"};
  }
  throw std::logic_error("plan_question: bad type");
}

std::vector<std::string> build_question(const Sentence& target, const std::string& slot) {
  const SentKind k = target.kind;
  if (k == SentKind::founded && slot == "name")
    return {"who", "founded", target.org, "?"};
  if (k == SentKind::founded && slot == "city")
    return {"where", "was", target.org, "founded", "?"};
  if (k == SentKind::hired)
    return {"who", "did", target.org, "hire", "?"};
  if (k == SentKind::traveled)
    return {"where", "did", target.name, "travel", "?"};
  if (k == SentKind::joined)
    return {"when", "did", target.name, "join", target.org, "?"};
  if (k == SentKind::won)
    return {"when", "did", "the", target.team, "win", "the", target.event, "?"};
  if (k == SentKind::scored)
    return {"how", "many", "points", "did", "the", target.team, "score", "?"};
  if (k == SentKind::cost)
    return {"how", "much", "did", "the", target.item, "cost", "?"};
  if (k == SentKind::built)
    return {"what", "did", target.name, "build", "?"};
  throw std::logic_error("build_question: bad plan");
}

// Fixed 30/20/20/20/10 schedule keeps the quantifier share at 30% exactly.
QuestionType type_for_index(int i) {
  const int r = i % 10;
  if (r < 3) return QuestionType::quantifier;
  if (r < 5) return QuestionType::entity;
  if (r < 7) return QuestionType::where;
  if (r < 9) return QuestionType::when;
  return QuestionType::other;
}

RawExample generate_example(Rng& rng, const GenConfig& cfg, QuestionType type,
                            const std::string& id) {
  SlotPool pool;
  const QuestionPlan plan = plan_question(type, rng);
  Sentence target = build_sentence(plan.kind, rng, pool, plan.answer_slot);

  std::vector<Sentence> fillers;
  int sentences_wanted = std::max(cfg.passage_sentences, 1);
  if (type == QuestionType::quantifier)
    sentences_wanted = std::max(sentences_wanted, 1 + cfg.n_numeric_distractors);

  if (type == QuestionType::quantifier) {
    for (int i = 0; i < cfg.n_numeric_distractors; ++i)
      fillers.push_back(build_sentence(kNumericKinds[rng.below(kNumericKinds.size())], rng, pool, ""));
  }
  while (static_cast<int>(fillers.size()) + 1 < sentences_wanted)
    fillers.push_back(build_sentence(kAllKinds[rng.below(kAllKinds.size())], rng, pool, ""));

  // target position among the sentences
  std::vector<const Sentence*> order;
  order.push_back(&target);
  for (const auto& f : fillers) order.push_back(&f);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  RawExample ex;
  ex.id = id;
  ex.question_type = type;
  int answer_start = -1, answer_len = 0;
  for (const Sentence* s : order) {
    if (s == &target) {
      answer_start = static_cast<int>(ex.passage.size()) + target.answer_pos;
      answer_len = target.answer_len;
    }
    ex.passage.insert(ex.passage.end(), s->tokens.begin(), s->tokens.end());
    ex.annotations.insert(ex.annotations.end(), s->anns.begin(), s->anns.end());
  }
  ex.answer_start = answer_start;
  ex.answer_end = answer_start + answer_len - 1;
  ex.question = build_question(target, plan.answer_slot);
  for (int i = ex.answer_start; i <= ex.answer_end; ++i) {
    if (!ex.answer_text.empty()) ex.answer_text += " ";
    ex.answer_text += ex.passage[static_cast<std::size_t>(i)];
  }
  ex.validate(id);
  return ex;
}

}  // namespace

const char* pos_class_name(PosClass p) {
  switch (p) {
    case PosClass::noun: return "noun";
    case PosClass::verb: return "verb";
    case PosClass::stopword: return "stopword";
    case PosClass::adverb: return "adverb";
    case PosClass::adjective: return "adjective";
    case PosClass::punct: return "punct";
    case PosClass::other: return "other";
  }
  return "?";
}

PosClass pos_class_from_name(const std::string& s) {
  for (const PosClass p : {PosClass::noun, PosClass::verb, PosClass::stopword, PosClass::adverb,
                           PosClass::adjective, PosClass::punct, PosClass::other})
    if (s == pos_class_name(p)) return p;
  throw std::invalid_argument("unknown pos class: " + s);
}

const char* question_type_name(QuestionType q) {
  switch (q) {
    case QuestionType::entity: return "entity";
    case QuestionType::quantifier: return "quantifier";
    case QuestionType::where: return "where";
    case QuestionType::when: return "when";
    case QuestionType::other: return "other";
  }
  return "?";
}

QuestionType question_type_from_name(const std::string& s) {
  for (const QuestionType q : {QuestionType::entity, QuestionType::quantifier, QuestionType::where,
                               QuestionType::when, QuestionType::other})
    if (s == question_type_name(q)) return q;
  throw std::invalid_argument("unknown question type: " + s);
}

void RawExample::validate(const std::string& where) const {
  if (passage.empty()) throw std::invalid_argument(where + ": empty passage");
  if (question.empty()) throw std::invalid_argument(where + ": empty question");
  if (annotations.size() != passage.size())
    throw std::invalid_argument(where + ": " + std::to_string(annotations.size()) +
                                " annotations for " + std::to_string(passage.size()) + " words");
  if (answer_start < 0 || answer_end < answer_start ||
      answer_end >= static_cast<int>(passage.size()))
    throw std::invalid_argument(where + ": answer span [" + std::to_string(answer_start) + "," +
                                std::to_string(answer_end) + "] outside passage of " +
                                std::to_string(passage.size()) + " words");
}

bool is_numeric_word(const std::string& w) {
  if (!w.empty() && std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); }))
    return true;
  return number_word_set().count(lower(w)) > 0;
}

bool is_stopword(const std::string& w) { return stopword_set().count(lower(w)) > 0; }

std::pair<std::vector<RawExample>, std::vector<RawExample>> generate_corpus(const GenConfig& cfg) {
  if (cfg.n_train <= 0 || cfg.n_dev <= 0)
    throw std::invalid_argument("generate_corpus: n_train and n_dev must be positive");
  Rng rng(cfg.seed);
  std::vector<RawExample> train, dev;
  train.reserve(static_cast<std::size_t>(cfg.n_train));
  dev.reserve(static_cast<std::size_t>(cfg.n_dev));
  char buf[32];
  for (int i = 0; i < cfg.n_train; ++i) {
    std::snprintf(buf, sizeof(buf), "train-%05d", i);
    train.push_back(generate_example(rng, cfg, type_for_index(i), buf));
  }
  for (int i = 0; i < cfg.n_dev; ++i) {
    std::snprintf(buf, sizeof(buf), "dev-%05d", i);
    dev.push_back(generate_example(rng, cfg, type_for_index(i), buf));
  }
  return {std::move(train), std::move(dev)};
}

Vocabulary::Vocabulary() {
  add("[PAD]");
  add("[UNK]");
  add("[CLS]");
  add("[SEP]");
}

void Vocabulary::add(const std::string& word) {
  if (ids_.count(word)) throw std::invalid_argument("vocab: duplicate word " + word);
  ids_[word] = static_cast<int>(words_.size());
  words_.push_back(word);
}

int Vocabulary::id(const std::string& word) const {
  const auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size())
    throw std::invalid_argument("vocab: id " + std::to_string(id) + " out of range");
  return words_[static_cast<std::size_t>(id)];
}

Vocabulary build_vocab(const std::vector<RawExample>& examples, int min_count) {
  if (examples.empty()) throw std::invalid_argument("build_vocab: empty example list");
  std::unordered_map<std::string, long> counts;
  for (const auto& ex : examples) {
    for (const auto& w : ex.passage) ++counts[w];
    for (const auto& w : ex.question) ++counts[w];
  }
  std::vector<std::pair<std::string, long>> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [word, count] : sorted)
    if (count >= min_count) vocab.add(word);
  return vocab;
}

std::vector<std::uint8_t> compute_query_overlap(const RawExample& raw, bool exclude_stopwords) {
  std::unordered_set<std::string> qwords;
  for (const auto& w : raw.question) qwords.insert(lower(w));
  std::vector<std::uint8_t> overlap(raw.passage.size(), 0);
  for (std::size_t i = 0; i < raw.passage.size(); ++i) {
    const std::string w = lower(raw.passage[i]);
    if (!qwords.count(w)) continue;
    if (exclude_stopwords && is_stopword(w)) continue;
    overlap[i] = 1;
  }
  return overlap;
}

EncodedExample encode_example(const RawExample& raw, const Vocabulary& vocab, int max_seq_len,
                              const EncodeOptions& opt) {
  raw.validate(raw.id.empty() ? "example" : raw.id);
  const int q = static_cast<int>(raw.question.size());
  const int p = static_cast<int>(raw.passage.size());
  const int total = q + p + 3;
  if (total > max_seq_len)
    throw std::invalid_argument("encode_example: " + (raw.id.empty() ? "example" : raw.id) +
                                " needs " + std::to_string(total) + " tokens, max_seq_len is " +
                                std::to_string(max_seq_len));

  EncodedExample enc;
  enc.id = raw.id;
  enc.question_type = raw.question_type;
  enc.token_ids.reserve(static_cast<std::size_t>(total));
  enc.segment_ids.reserve(static_cast<std::size_t>(total));

  enc.token_ids.push_back(Vocabulary::kCls);
  enc.segment_ids.push_back(0);
  for (const auto& w : raw.question) {
    enc.token_ids.push_back(vocab.id(w));
    enc.segment_ids.push_back(0);
  }
  enc.token_ids.push_back(Vocabulary::kSep);
  enc.segment_ids.push_back(0);

  enc.passage_range.begin = static_cast<int>(enc.token_ids.size());
  for (const auto& w : raw.passage) {
    enc.token_ids.push_back(vocab.id(w));
    enc.segment_ids.push_back(1);
  }
  enc.passage_range.end = static_cast<int>(enc.token_ids.size());
  enc.token_ids.push_back(Vocabulary::kSep);
  enc.segment_ids.push_back(1);

  enc.gold_span.begin = enc.passage_range.begin + raw.answer_start;
  enc.gold_span.end = enc.passage_range.begin + raw.answer_end + 1;
  enc.annotations = raw.annotations;
  enc.query_overlap = compute_query_overlap(raw, opt.overlap_excludes_stopwords);
  enc.n_numeric = 0;
  for (const auto& a : raw.annotations)
    if (a.numeric) ++enc.n_numeric;
  return enc;
}

namespace {

json example_to_json(const RawExample& ex) {
  json j;
  j["id"] = ex.id;
  j["passage"] = ex.passage;
  j["question"] = ex.question;
  j["answer_start"] = ex.answer_start;
  j["answer_end"] = ex.answer_end;
  j["question_type"] = question_type_name(ex.question_type);
  std::vector<std::string> pos;
  std::vector<bool> numeric;
  for (const auto& a : ex.annotations) {
    pos.push_back(pos_class_name(a.pos));
    numeric.push_back(a.numeric);
  }
  j["pos"] = pos;
  j["numeric"] = numeric;
  j["answer_text"] = ex.answer_text;
  return j;
}

RawExample example_from_json(const json& j, const std::string& where) {
  RawExample ex;
  ex.id = j.value("id", "");
  ex.passage = j.at("passage").get<std::vector<std::string>>();
  ex.question = j.at("question").get<std::vector<std::string>>();
  ex.answer_start = j.at("answer_start").get<int>();
  ex.answer_end = j.at("answer_end").get<int>();
  ex.question_type = question_type_from_name(j.at("question_type").get<std::string>());
  const auto pos = j.at("pos").get<std::vector<std::string>>();
  const auto numeric = j.at("numeric").get<std::vector<bool>>();
  if (pos.size() != numeric.size())
    throw std::invalid_argument("pos and numeric arrays differ in length");
  for (std::size_t i = 0; i < pos.size(); ++i)
    ex.annotations.push_back({pos_class_from_name(pos[i]), numeric[i]});
  if (j.contains("answer_text")) {
    ex.answer_text = j.at("answer_text").get<std::string>();
  } else {
    for (int i = ex.answer_start; i <= ex.answer_end && i < static_cast<int>(ex.passage.size()); ++i) {
      if (!ex.answer_text.empty()) ex.answer_text += " ";
      ex.answer_text += ex.passage[static_cast<std::size_t>(i)];
    }
  }
  ex.validate(where);
  return ex;
}

}  // namespace

void save_dataset(const std::vector<RawExample>& examples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  for (const auto& ex : examples) out << example_to_json(ex).dump() << "\n";
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

std::vector<RawExample> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::vector<RawExample> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
      out.push_back(example_from_json(j, where));
    } catch (const json::exception& e) {
      throw std::runtime_error(where + ": malformed record: " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
  }
  return out;
}

void save_vocab(const Vocabulary& vocab, const std::string& path, const std::string& config_hash) {
  json j;
  j["format_version"] = 1;
  j["config_hash"] = config_hash;
  std::vector<std::string> words;
  for (int i = 0; i < vocab.size(); ++i) words.push_back(vocab.word(i));
  j["words"] = words;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_vocab: cannot open " + path);
  out << j.dump(2) << "\n";
}

Vocabulary load_vocab(const std::string& path, std::string* config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_vocab: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_vocab: " + path + ": " + e.what());
  }
  const auto words = j.at("words").get<std::vector<std::string>>();
  if (words.size() < 4 || words[0] != "[PAD]" || words[1] != "[UNK]" || words[2] != "[CLS]" ||
      words[3] != "[SEP]")
    throw std::runtime_error("load_vocab: " + path + ": reserved tokens missing or reordered");
  if (config_hash) *config_hash = j.value("config_hash", "");
  Vocabulary vocab;
  for (std::size_t i = 4; i < words.size(); ++i) vocab.add(words[i]);
  return vocab;
}

}  // namespace iglab
