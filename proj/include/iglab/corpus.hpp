#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

// Synthetic reading-comprehension corpus: templated passages with verbatim
// answer spans, per-word POS/numeric annotations, and a deliberate supply of
// numeric distractors for quantifier (how many / how much) questions.
namespace iglab {

enum class PosClass { noun, verb, stopword, adverb, adjective, punct, other };
enum class QuestionType { entity, quantifier, where, when, other };

const char* pos_class_name(PosClass p);
PosClass pos_class_from_name(const std::string& s);
const char* question_type_name(QuestionType q);
QuestionType question_type_from_name(const std::string& s);

struct TokenAnnotation {
  PosClass pos = PosClass::other;
  bool numeric = false;
};

struct RawExample {
  std::string id;
  std::vector<std::string> passage;
  std::vector<std::string> question;
  int answer_start = 0;  // word indices into passage, inclusive
  int answer_end = 0;
  QuestionType question_type = QuestionType::other;
  std::vector<TokenAnnotation> annotations;  // one per passage word
  std::string answer_text;                   // the generator's intended answer

  void validate(const std::string& where) const;
};

struct GenConfig {
  int n_train = 2000;
  int n_dev = 500;
  std::uint64_t seed = 0;
  int n_numeric_distractors = 3;
  int passage_sentences = 6;
};

std::pair<std::vector<RawExample>, std::vector<RawExample>> generate_corpus(const GenConfig& cfg);

// true for digit strings and a fixed number-word list (zero..twenty,
// hundred, thousand).
bool is_numeric_word(const std::string& w);
bool is_stopword(const std::string& w);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  Vocabulary();

  int id(const std::string& word) const;  // kUnk for unseen words
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(words_.size()); }
  void add(const std::string& word);

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> words_;
};

// Words with count >= min_count, ids assigned by frequency desc then lexicographic.
Vocabulary build_vocab(const std::vector<RawExample>& examples, int min_count = 1);

struct IndexRange {
  int begin = 0;  // half-open [begin, end)
  int end = 0;
  int size() const { return end - begin; }
  bool contains(int i) const { return begin <= i && i < end; }
};

struct EncodedExample {
  std::string id;
  std::vector<int> token_ids;    // [CLS] question [SEP] passage [SEP]
  std::vector<int> segment_ids;  // 0 question side, 1 passage side
  IndexRange passage_range;      // token indices covering passage words only
  IndexRange gold_span;          // token indices, half-open, inside passage_range
  QuestionType question_type = QuestionType::other;
  std::vector<TokenAnnotation> annotations;  // aligned to passage_range
  std::vector<std::uint8_t> query_overlap;   // aligned to passage_range
  int n_numeric = 0;                         // numeric passage words

  int seq_len() const { return static_cast<int>(token_ids.size()); }
};

struct EncodeOptions {
  bool overlap_excludes_stopwords = false;
};

EncodedExample encode_example(const RawExample& raw, const Vocabulary& vocab, int max_seq_len,
                              const EncodeOptions& opt = {});

std::vector<std::uint8_t> compute_query_overlap(const RawExample& raw,
                                                bool exclude_stopwords);

// Line-delimited JSON records, one example per line.
void save_dataset(const std::vector<RawExample>& examples, const std::string& path);
std::vector<RawExample> load_dataset(const std::string& path);

void save_vocab(const Vocabulary& vocab, const std::string& path, const std::string& config_hash);
Vocabulary load_vocab(const std::string& path, std::string* config_hash = nullptr);

}  // namespace iglab
