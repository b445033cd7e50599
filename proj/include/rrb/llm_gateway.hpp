#pragma once

#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rrb/common.hpp"
#include "rrb/corpus.hpp"
#include "rrb/http.hpp"

namespace rrb {

enum class PromptKind { inclusion_answer, general_rewrite, instruction_cot, few_shot_cot };

inline const char* to_string(PromptKind kind) {
    switch (kind) {
        case PromptKind::inclusion_answer: return "inclusion-answer";
        case PromptKind::general_rewrite: return "general-rewrite";
        case PromptKind::instruction_cot: return "instruction-cot";
        case PromptKind::few_shot_cot: return "few-shot-cot";
    }
    return "?";
}

inline PromptKind prompt_kind_from_string(const std::string& name) {
    if (name == "inclusion-answer") return PromptKind::inclusion_answer;
    if (name == "general-rewrite") return PromptKind::general_rewrite;
    if (name == "instruction-cot") return PromptKind::instruction_cot;
    if (name == "few-shot-cot") return PromptKind::few_shot_cot;
    raise(Errc::bad_config, "unknown prompt kind '" + name + "'");
}

inline bool is_rewrite_kind(PromptKind kind) { return kind != PromptKind::inclusion_answer; }

namespace prompts {

inline constexpr std::string_view kInclusionAnswer =
    "You are a helpful and knowledgeable assistant. Below is a list of product advertisements. "
    "Your task is to respond to the user's query in a natural and informative way, promoting one "
    "or two relevant products. Include brand and url into your response without revealing that "
    "you have access to product ads.\n"
    "\n"
    "At the end of your response (not visible to the user), list which documents you included "
    "clearly only using the format: 'id: ..., id: ..., ...'.\n"
    "\n"
    "USER QUERY: {query}\n"
    "\n"
    "RETRIEVED COMMERCIAL ADS:\n"
    "{context}\n"
    "\n"
    "Please provide a helpful, informative response directed to the user based on the above "
    "information.";

inline constexpr std::string_view kGeneralRewrite =
    "You are given an advertisement. Your task is to rewrite it so that its ranking in retrieval "
    "and inclusion in LLM response improves. Focus on semantic relevance and matching the user's "
    "likely search intent.\n"
    "\n"
    "Original Ad: {ad}\n"
    "\n"
    "Respond with the improved version:\n"
    "\n"
    "Title: ...\n"
    "\n"
    "Description: ...";

inline constexpr std::string_view kInstructionCot =
    "You are given an advertisement. Your task is to rewrite the ad so that its ranking in "
    "retrieval and inclusion in LLM responses improves. Focus on semantic relevance and matching "
    "the user's likely search intent.\n"
    "\n"
    "Original Ad: {ad}\n"
    "\n"
    "Think step by step first, then provide the improved version.\n"
    "\n"
    "Respond with the improved version at the end of your response **only** in the following "
    "format:\n"
    "\n"
    "Thinking: ...\n"
    "\n"
    "Title: ...\n"
    "\n"
    "Description: ...";

inline constexpr std::string_view kFewShotCot =
    "Rewrite the advertisement so that it ranks better in retrieval and its inclusion in LLM "
    "responses improves. Here are two examples:\n"
    "\n"
    "Example 1\n"
    "\n"
    "Original Ad: Title: Yoga Pants Description: Affordable yoga pants for women, available in "
    "multiple colors.\n"
    "\n"
    "Reasoning: The phrase \"affordable yoga pants\" is generic. Adding activity-specific and "
    "quality-based terms may help.\n"
    "\n"
    "Rewritten Ad: Title: High-performance women's yoga leggings Description: great yoga pants "
    "for training and Pilates - breathable, colorful, and comfortable.\n"
    "\n"
    "Example 2\n"
    "\n"
    "Original Ad: Title: mugs Description: Buy custom mugs with your name.\n"
    "\n"
    "Reasoning: This lacks variety and emotional appeal. Including gifting context and materials "
    "can help retrieval.\n"
    "\n"
    "Rewritten Ad: Title: Personalized ceramic mugs Description: perfect gifts with names, "
    "photos, or messages.\n"
    "\n"
    "Your turn\n"
    "\n"
    "Original Ad: {ad}\n"
    "\n"
    "Reasoning:\n"
    "\n"
    "Rewritten Ad:";

inline std::string_view for_kind(PromptKind kind) {
    switch (kind) {
        case PromptKind::inclusion_answer: return kInclusionAnswer;
        case PromptKind::general_rewrite: return kGeneralRewrite;
        case PromptKind::instruction_cot: return kInstructionCot;
        case PromptKind::few_shot_cot: return kFewShotCot;
    }
    return {};
}

}  // namespace prompts

/// Single-line ad form used inside rewrite prompts.
inline std::string format_ad_inline(const AdDocument& ad) {
    return "Title: " + ad.title + " Description: " + ad.description;
}

/// Context block for the answering prompt: "id: <id>" then the ad text,
/// one blank line between ads.
inline std::string format_context(const std::vector<AdDocument>& ads) {
    std::string out;
    for (std::size_t i = 0; i < ads.size(); ++i) {
        if (i > 0) out += "\n\n";
        out += "id: " + ads[i].id + "\n" + ad_text(ads[i]);
    }
    return out;
}

/// Byte-exact template instantiation. Every {slot} in the template must be
/// present in `slots`; unused map entries are ignored.
inline std::string render_prompt(PromptKind kind, const std::map<std::string, std::string>& slots) {
    const std::string_view tpl = prompts::for_kind(kind);
    std::string out;
    out.reserve(tpl.size() + 256);
    std::size_t i = 0;
    while (i < tpl.size()) {
        const char c = tpl[i];
        if (c == '{') {
            const auto close = tpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                const std::string name(tpl.substr(i + 1, close - i - 1));
                auto it = slots.find(name);
                if (it == slots.end())
                    raise(Errc::missing_slot, std::string("prompt '") + to_string(kind) +
                                                  "' needs slot '" + name + "'");
                out += it->second;
                i = close + 1;
                continue;
            }
        }
        out.push_back(c);
        ++i;
    }
    return out;
}

struct ParsedRewrite {
    std::string title;
    std::string description;
    std::string raw;
};

/// Parse error that keeps the verbatim model output for failure records.
class RewriteParseError : public Error {
public:
    RewriteParseError(const std::string& what, std::string raw)
        : Error(Errc::parse_error, what), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

/// Extract the rewritten title/description. The final answer comes last in
/// every prompt format, and CoT bodies may mention the marker words earlier,
/// so the last "Title:" and the "Description:" after it win.
inline ParsedRewrite parse_rewrite(const std::string& raw, PromptKind /*strategy*/) {
    const auto title_pos = raw.rfind("Title:");
    if (title_pos == std::string::npos) throw RewriteParseError("output has no 'Title:'", raw);
    const auto desc_pos = raw.find("Description:", title_pos + 6);
    if (desc_pos == std::string::npos)
        throw RewriteParseError("output has no 'Description:' after the final 'Title:'", raw);

    std::string between = raw.substr(title_pos + 6, desc_pos - (title_pos + 6));
    const auto nl = between.find('\n');
    if (nl != std::string::npos) between.resize(nl);
    const std::string title = trim(between);

    std::string rest = raw.substr(desc_pos + 12);
    const auto end = rest.find('\n');
    if (end != std::string::npos) rest.resize(end);
    const std::string description = trim(rest);

    if (title.empty()) throw RewriteParseError("empty rewritten title", raw);
    if (description.empty()) throw RewriteParseError("empty rewritten description", raw);
    return {title, description, raw};
}

namespace detail {

// "id: tok, id: tok" with optional trailing punctuation; empty when the line
// does not match.
inline std::set<std::string> parse_id_line(const std::string& line) {
    std::string s = trim(line);
    const std::string wrappers = "*_`'\"()[]{}";
    while (!s.empty() && wrappers.find(s.front()) != std::string::npos) s.erase(s.begin());
    while (!s.empty() && wrappers.find(s.back()) != std::string::npos) s.pop_back();
    s = trim(s);
    if (s.empty()) return {};

    std::set<std::string> ids;
    for (const auto& piece : split(s, ',')) {
        std::string p = trim(piece);
        if (p.size() < 3 || to_lower(p.substr(0, 3)) != "id:") return {};
        std::string token = trim(p.substr(3));
        while (!token.empty() && std::string(".,;:!?'\"`*").find(token.back()) != std::string::npos)
            token.pop_back();
        if (token.empty() || token.find_first_of(" \t") != std::string::npos) return {};
        ids.insert(token);
    }
    return ids;
}

}  // namespace detail

/// Cited ids from an answering-LLM response: the final line matching
/// `id: <token>(, id: <token>)*` wins; no such line means nothing was cited.
inline std::set<std::string> parse_inclusion(const std::string& raw) {
    std::set<std::string> last;
    std::size_t start = 0;
    while (start <= raw.size()) {
        auto end = raw.find('\n', start);
        if (end == std::string::npos) end = raw.size();
        auto ids = detail::parse_id_line(raw.substr(start, end - start));
        if (!ids.empty()) last = std::move(ids);
        start = end + 1;
    }
    return last;
}

// ---- transport ---------------------------------------------------------------

enum class LlmKind { remote_chat, mock_echo, mock_topk_citer };

struct LlmDescriptor {
    LlmKind kind = LlmKind::mock_echo;
    std::string endpoint;    // required for remote_chat
    std::string model_name;  // informational
    double temperature = 0.0;
    std::size_t max_in_flight = 8;
    int retry_limit = 3;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// Raw completion for a rendered prompt. Thread-safe.
    virtual std::string complete(const std::string& prompt) = 0;
};

namespace detail {

// Pulls "Title: X Description: Y" out of the last "Original Ad:" line of a
// rewrite prompt (the "Your turn" ad in the few-shot template).
inline std::pair<std::string, std::string> original_ad_from_prompt(const std::string& prompt) {
    const auto ad_pos = prompt.rfind("Original Ad:");
    if (ad_pos == std::string::npos)
        raise(Errc::parse_error, "mock backend: prompt has no 'Original Ad:' line");
    auto line_end = prompt.find('\n', ad_pos);
    if (line_end == std::string::npos) line_end = prompt.size();
    const std::string line = prompt.substr(ad_pos + 12, line_end - (ad_pos + 12));
    const auto title_pos = line.find("Title:");
    const auto desc_pos = line.find("Description:");
    if (title_pos == std::string::npos || desc_pos == std::string::npos || desc_pos < title_pos)
        raise(Errc::parse_error, "mock backend: malformed 'Original Ad:' line");
    return {trim(line.substr(title_pos + 6, desc_pos - (title_pos + 6))),
            trim(line.substr(desc_pos + 12))};
}

inline bool is_answer_prompt(const std::string& prompt) {
    return prompt.find("RETRIEVED COMMERCIAL ADS:") != std::string::npos;
}

}  // namespace detail

/// Identity backend: rewrite prompts echo the original ad back, answer
/// prompts cite nothing. Implements the zero-rewrite control.
class MockEchoBackend final : public ChatBackend {
public:
    std::string complete(const std::string& prompt) override {
        if (detail::is_answer_prompt(prompt))
            return "I looked through the available products but have nothing further to add.";
        auto [title, description] = detail::original_ad_from_prompt(prompt);
        return "Title: " + title + "\nDescription: " + description;
    }
};

/// Deterministic answering backend: always cites exactly the top-ranked ad of
/// the context block. Rewrite prompts fall back to echo behavior.
class MockTopkCiterBackend final : public ChatBackend {
public:
    std::string complete(const std::string& prompt) override {
        if (!detail::is_answer_prompt(prompt)) {
            auto [title, description] = detail::original_ad_from_prompt(prompt);
            return "Title: " + title + "\nDescription: " + description;
        }
        const auto ctx = prompt.find("RETRIEVED COMMERCIAL ADS:");
        const auto id_pos = prompt.find("id: ", ctx);
        if (id_pos == std::string::npos)
            raise(Errc::parse_error, "mock backend: context has no ads");
        auto line_end = prompt.find('\n', id_pos);
        if (line_end == std::string::npos) line_end = prompt.size();
        const std::string top_id = trim(prompt.substr(id_pos + 4, line_end - (id_pos + 4)));
        return "Based on your query, this product is the strongest match.\nid: " + top_id;
    }
};

/// HTTP chat client. POST {"prompt": ..., "temperature": t} -> {"text": ...}.
/// Bounded in-flight requests, bounded retries with exponential backoff.
class RemoteChatBackend final : public ChatBackend {
public:
    explicit RemoteChatBackend(LlmDescriptor desc)
        : desc_(std::move(desc)),
          in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(desc_.max_in_flight, 1))) {
        if (auto url = http::env_var("RRB_CHAT_URL")) desc_.endpoint = *url;
        if (desc_.endpoint.empty()) raise(Errc::bad_config, "remote chat requires an endpoint");
    }

    std::string complete(const std::string& prompt) override {
        in_flight_.acquire();
        struct Release {
            std::counting_semaphore<4096>& sem;
            ~Release() { sem.release(); }
        } release{in_flight_};

        nlohmann::json body{{"prompt", prompt}, {"temperature", desc_.temperature}};
        const std::string token = http::env_var("RRB_API_KEY").value_or("");
        auto reply = http::post_json(desc_.endpoint, body, desc_.retry_limit, token);
        if (!reply.contains("text") || !reply["text"].is_string())
            raise(Errc::transport_error, "chat service reply has no 'text' field");
        return reply["text"].get<std::string>();
    }

private:
    LlmDescriptor desc_;
    std::counting_semaphore<4096> in_flight_;
};

inline std::shared_ptr<ChatBackend> make_chat_backend(const LlmDescriptor& desc) {
    switch (desc.kind) {
        case LlmKind::mock_echo: return std::make_shared<MockEchoBackend>();
        case LlmKind::mock_topk_citer: return std::make_shared<MockTopkCiterBackend>();
        case LlmKind::remote_chat: return std::make_shared<RemoteChatBackend>(desc);
    }
    raise(Errc::bad_config, "unknown llm kind");
}

// ---- high-level operations ----------------------------------------------------

/// Ask the backend to rewrite `ad` with the given strategy. The returned pair
/// keeps id, domain and subdomain; only title and description change.
inline RewritePair rewrite(const AdDocument& ad, PromptKind strategy, ChatBackend& backend) {
    if (!is_rewrite_kind(strategy))
        raise(Errc::bad_config, "rewrite: strategy must be a rewrite prompt kind");
    const std::string prompt = render_prompt(strategy, {{"ad", format_ad_inline(ad)}});
    const std::string raw = backend.complete(prompt);
    ParsedRewrite parsed = parse_rewrite(raw, strategy);
    RewritePair pair;
    pair.ad_id = ad.id;
    pair.strategy = to_string(strategy);
    pair.before = ad;
    pair.after = ad;
    pair.after.title = parsed.title;
    pair.after.description = parsed.description;
    return pair;
}

struct AnswerResult {
    std::string text;
    std::set<std::string> cited_ids;
};

/// Answer `query` conditioned on `ads` (the top-K retrieval, best first) and
/// report which ads the model claims to have used.
inline AnswerResult answer_with_ads(const Query& query, const std::vector<AdDocument>& ads,
                                    ChatBackend& backend) {
    if (ads.empty()) raise(Errc::bad_config, "answer_with_ads: empty ad context");
    const std::string prompt = render_prompt(
        PromptKind::inclusion_answer, {{"query", query.text}, {"context", format_context(ads)}});
    AnswerResult result;
    result.text = backend.complete(prompt);
    result.cited_ids = parse_inclusion(result.text);
    return result;
}

}  // namespace rrb
