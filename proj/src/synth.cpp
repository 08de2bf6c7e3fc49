#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "qaplaus/dataset.hpp"
#include "qaplaus/errors.hpp"

namespace qaplaus {

namespace {

// A topic couples the nouns a generated question can ask about with the
// answer phrases a plausible response would contain. Answer phrases never
// reuse subject nouns, so a response's lexicon identifies its topic.
struct Topic {
  std::vector<std::string_view> subjects;
  std::vector<std::string_view> questions;  // "{s}" marks the subject
  std::vector<std::string_view> answers;
};

const std::vector<Topic>& topics() {
  static const std::vector<Topic> kTopics = {
      {{"table", "plate", "bowl", "counter", "tray"},
       {"What is on the {s}?", "What is on top of the {s}?", "What food is on the {s}?"},
       {"beet and carrot juice", "pasta", "chicken", "a burger", "fried rice", "tacos",
        "a salad", "pizza", "sushi", "pancakes"}},
      {{"dog", "cat", "hamster", "bird", "horse"},
       {"What is the {s} doing?", "What is the {s} playing with?", "What is next to the {s}?"},
       {"sleeping", "chasing a ball", "eating grass", "running around", "a chew toy",
        "playing fetch", "rolling over", "napping in the sun"}},
      {{"person", "man", "woman", "kid", "girl"},
       {"What is the {s} holding?", "What is the {s} wearing?", "What is the {s} carrying?"},
       {"a red jacket", "an umbrella", "blue jeans", "a coffee cup", "sunglasses", "a guitar",
        "a baseball cap", "a backpack"}},
      {{"car", "truck", "bike", "bus", "boat"},
       {"What color is the {s}?", "What brand is the {s}?", "What kind of {s} is that?"},
       {"bright red", "dark blue", "toyota", "white and black", "silver", "honda", "green",
        "a pickup"}},
      {{"sky", "building", "sign", "wall", "tree"},
       {"What is behind the {s}?", "What is written on the {s}?", "What is in front of the {s}?"},
       {"mountains", "the ocean", "a parking lot", "open for business", "graffiti art", "clouds",
        "a bridge", "snow"}},
      {{"ball", "team", "player", "field", "court"},
       {"What sport is played with the {s}?", "What game is on the {s}?",
        "What sport does the {s} play?"},
       {"soccer", "basketball", "tennis", "ice hockey", "baseball", "volleyball", "rugby",
        "golf"}},
  };
  return kTopics;
}

// Plausible response wrappers; "{a}" marks the answer phrase.
constexpr std::array<std::string_view, 10> kAnswerWrappers = {
    "{a}", "{a} lol", "it is {a}", "its {a} haha", "looks like {a} to me",
    "i think {a}", "pretty sure {a}", "{a} :)", "just {a}", "oh that's {a}"};

// Responses that dodge the question.
constexpr std::array<std::string_view, 12> kDeflections = {
    "not much lol", "idk", "why do you ask", "lol nice try bot", "no idea", "who cares",
    "haha what", "you tell me", "nothing really", "stop asking me questions",
    "is this a bot", "lol"};

// Responses correcting a wrong question and naming what is really there.
constexpr std::array<std::string_view, 5> kCorrectionsWithAnswer = {
    "that is not {s} that's {a}", "that is not a {s} it is {a}",
    "there is no {s} but there is {a}", "no {s} here just {a}", "thats not a {s} lol its {a}"};

// Responses correcting a wrong question without offering an answer.
constexpr std::array<std::string_view, 6> kCorrectionsOnly = {
    "that is not a {s}", "there is no {s}", "no {s} in this picture", "thats not a {s} lol",
    "what {s}", "there is no {s} here bot"};

class Generator {
 public:
  explicit Generator(std::uint64_t seed) : rng_(seed) {}

  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }

  template <typename Range>
  std::string_view choose(const Range& range) {
    return range[pick(range.size())];
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

std::string replace_all(std::string_view tmpl, std::string_view key, std::string_view value) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto hit = tmpl.find(key, pos);
    if (hit == std::string_view::npos) break;
    out.append(tmpl.substr(pos, hit - pos)).append(value);
    pos = hit + key.size();
  }
  out.append(tmpl.substr(pos));
  return out;
}

// Fills "{s}" first, then splices the answer at "{a}" and reports its span.
std::string fill_response(std::string_view tmpl, std::string_view subject, std::string_view answer,
                          std::optional<AnswerSpan>* span) {
  std::string text = replace_all(tmpl, "{s}", subject);
  const auto hit = text.find("{a}");
  if (hit == std::string::npos) return text;
  text.replace(hit, 3, answer);
  if (span) *span = AnswerSpan{hit, hit + answer.size()};
  return text;
}

enum class Kind { yy, yn, ny, nn };

}  // namespace

std::vector<QAExample> synth_corpus(std::size_t n, const ClassProportions& proportions,
                                    std::uint64_t seed) {
  if (n < 4) throw ValidationError("synthetic corpus needs n >= 4");
  const ClassCounts counts = synth_class_counts(n, proportions);

  std::vector<Kind> kinds;
  kinds.reserve(n);
  kinds.insert(kinds.end(), counts.yy, Kind::yy);
  kinds.insert(kinds.end(), counts.yn, Kind::yn);
  kinds.insert(kinds.end(), counts.ny, Kind::ny);
  kinds.insert(kinds.end(), counts.nn, Kind::nn);

  Generator gen(seed);
  std::shuffle(kinds.begin(), kinds.end(), gen.rng());

  const auto& all = topics();
  std::vector<QAExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t topic_idx = gen.pick(all.size());
    const Topic& topic = all[topic_idx];
    const std::string_view subject = gen.choose(topic.subjects);

    QAExample ex;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%06zu", i);
    ex.id = id;
    ex.question = replace_all(gen.choose(topic.questions), "{s}", subject);

    std::optional<AnswerSpan> span;
    switch (kinds[i]) {
      case Kind::yy:
        ex.response = fill_response(gen.choose(kAnswerWrappers), subject, gen.choose(topic.answers), &span);
        break;
      case Kind::yn:
        ex.response = std::string(gen.choose(kDeflections));
        break;
      case Kind::ny: {
        // The named object comes from a different topic than the question.
        const std::size_t other = (topic_idx + 1 + gen.pick(all.size() - 1)) % all.size();
        ex.response = fill_response(gen.choose(kCorrectionsWithAnswer), subject,
                                    gen.choose(all[other].answers), &span);
        break;
      }
      case Kind::nn:
        ex.response = replace_all(gen.choose(kCorrectionsOnly), "{s}", subject);
        break;
    }
    if (gen.coin(0.3)) {
      ex.response[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(ex.response[0])));
    }

    ex.question_plausible = kinds[i] == Kind::yy || kinds[i] == Kind::yn;
    ex.response_plausible = kinds[i] == Kind::yy || kinds[i] == Kind::ny;
    // Every plausible response carries its gold span, including corrections.
    ex.answer = span;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace qaplaus
