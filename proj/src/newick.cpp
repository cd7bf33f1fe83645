#include "dsdm/newick.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <set>

#include <fmt/format.h>

namespace dsdm {

NewickError::NewickError(const std::string& what, std::size_t offset)
    : ValidationError(fmt::format("newick: {} at offset {}", what, offset)), offset_(offset) {}

PhyloTree::PhyloTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
    for (auto& n : nodes_) {
        if (!n.is_leaf() && n.split_concentration.empty()) n.split_concentration.assign(n.children.size(), 1.0);
    }
    validate();
}

void PhyloTree::validate() const {
    if (nodes_.empty()) throw ValidationError("tree has no nodes");
    std::set<std::string> labels;
    std::size_t leaves = 0;
    for (const auto& n : nodes_) {
        if (n.is_leaf()) {
            ++leaves;
            if (n.label.empty()) throw ValidationError("tree has an unlabeled leaf");
            if (!labels.insert(n.label).second) throw ValidationError("duplicate leaf label '" + n.label + "'");
        } else {
            if (n.children.size() < 2) throw ValidationError("internal node with fewer than two children");
            if (n.split_concentration.size() != n.children.size()) {
                throw ValidationError("split concentrations do not match children");
            }
            for (double c : n.split_concentration) {
                if (!(c > 0.0)) throw ValidationError("split concentrations must be positive");
            }
        }
    }
    if (leaves < 2) throw ValidationError("tree needs at least two leaves");
}

std::vector<int> PhyloTree::leaves() const {
    std::vector<int> out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        if (nodes_[id].is_leaf()) out.push_back(static_cast<int>(id));
    }
    return out;
}

std::vector<std::string> PhyloTree::leaf_labels() const {
    std::vector<std::string> out;
    for (int id : leaves()) out.push_back(nodes_[id].label);
    return out;
}

std::size_t PhyloTree::n_leaves() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

void PhyloTree::set_split_concentration(int id, std::vector<double> conc) {
    auto& n = nodes_.at(static_cast<std::size_t>(id));
    if (n.is_leaf() || conc.size() != n.children.size()) {
        throw ValidationError("split concentration does not match node arity");
    }
    for (double c : conc) {
        if (!(c > 0.0)) throw ValidationError("split concentrations must be positive");
    }
    n.split_concentration = std::move(conc);
}

namespace {

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    std::vector<TreeNode> parse() {
        skip_ws();
        parse_subtree(-1);
        skip_ws();
        if (at_end()) throw NewickError("missing terminating ';'", pos_);
        if (text_[pos_] != ';') throw NewickError(fmt::format("unexpected '{}'", text_[pos_]), pos_);
        ++pos_;
        skip_ws();
        if (!at_end()) throw NewickError("trailing characters after ';'", pos_);
        return std::move(nodes_);
    }

private:
    static bool is_delim(char c) {
        return c == '(' || c == ')' || c == ',' || c == ':' || c == ';' || c == '[' || c == ']' || c == '\'' ||
               c == ' ' || c == '\t' || c == '\n' || c == '\r';
    }
    bool at_end() const { return pos_ >= text_.size(); }
    void skip_ws() {
        while (!at_end() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' || text_[pos_] == '\r')) {
            ++pos_;
        }
    }

    int parse_subtree(int parent) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(TreeNode{});
        nodes_[id].parent = parent;
        skip_ws();
        if (!at_end() && text_[pos_] == '(') {
            ++pos_;
            for (;;) {
                skip_ws();
                if (!at_end() && (text_[pos_] == ')' || text_[pos_] == ',')) {
                    throw NewickError("empty subtree", pos_);
                }
                const int child = parse_subtree(id);
                nodes_[id].children.push_back(child);
                skip_ws();
                if (at_end()) throw NewickError("unbalanced parenthesis", pos_);
                if (text_[pos_] == ',') {
                    ++pos_;
                    continue;
                }
                if (text_[pos_] == ')') {
                    ++pos_;
                    break;
                }
                throw NewickError(fmt::format("expected ',' or ')' but found '{}'", text_[pos_]), pos_);
            }
            if (nodes_[id].children.size() < 2) {
                throw NewickError("internal node with a single child", pos_);
            }
            nodes_[id].split_concentration.assign(nodes_[id].children.size(), 1.0);
        }
        skip_ws();
        const std::size_t label_at = pos_;
        nodes_[id].label = parse_label();
        if (nodes_[id].children.empty()) {
            if (nodes_[id].label.empty()) throw NewickError("leaf without a label", label_at);
            if (!seen_.insert(nodes_[id].label).second) {
                throw NewickError("duplicate leaf label '" + nodes_[id].label + "'", label_at);
            }
        }
        skip_ws();
        if (!at_end() && text_[pos_] == ':') {
            ++pos_;
            skip_ws();
            nodes_[id].length = parse_number();
        }
        return id;
    }

    std::string parse_label() {
        if (at_end()) return {};
        if (text_[pos_] == '\'') {
            const std::size_t start = pos_;
            ++pos_;
            std::string out;
            for (;;) {
                if (at_end()) throw NewickError("unterminated quoted label", start);
                if (text_[pos_] == '\'') {
                    if (pos_ + 1 < text_.size() && text_[pos_ + 1] == '\'') {
                        out.push_back('\'');
                        pos_ += 2;
                        continue;
                    }
                    ++pos_;
                    break;
                }
                out.push_back(text_[pos_++]);
            }
            if (out.empty()) throw NewickError("empty quoted label", start);
            return out;
        }
        if (text_[pos_] == '[' || text_[pos_] == ']') throw NewickError("comments are not supported", pos_);
        const std::size_t start = pos_;
        while (!at_end() && !is_delim(text_[pos_])) ++pos_;
        return std::string(text_.substr(start, pos_ - start));
    }

    double parse_number() {
        const std::size_t start = pos_;
        while (!at_end() && !is_delim(text_[pos_])) ++pos_;
        double value = 0.0;
        const char* first = text_.data() + start;
        const char* last = text_.data() + pos_;
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (start == pos_ || ec != std::errc{} || ptr != last || !std::isfinite(value)) {
            throw NewickError("malformed branch length", start);
        }
        return value;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    std::vector<TreeNode> nodes_;
    std::set<std::string> seen_;
};

bool needs_quotes(const std::string& label) {
    return std::any_of(label.begin(), label.end(), [](char c) {
        return c == '(' || c == ')' || c == ',' || c == ':' || c == ';' || c == '[' || c == ']' || c == '\'' ||
               c == ' ' || c == '\t' || c == '\n' || c == '\r';
    });
}

void write_label(std::string& out, const std::string& label) {
    if (!needs_quotes(label)) {
        out += label;
        return;
    }
    out.push_back('\'');
    for (char c : label) {
        if (c == '\'') out.push_back('\'');
        out.push_back(c);
    }
    out.push_back('\'');
}

void write_node(std::string& out, const PhyloTree& tree, int id) {
    const TreeNode& n = tree.node(id);
    if (!n.is_leaf()) {
        out.push_back('(');
        for (std::size_t c = 0; c < n.children.size(); ++c) {
            if (c > 0) out.push_back(',');
            write_node(out, tree, n.children[c]);
        }
        out.push_back(')');
    }
    write_label(out, n.label);
    if (n.length) {
        char buf[64];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, *n.length);
        out.push_back(':');
        out.append(buf, ptr);
    }
}

// Canonical string of the unordered subtree rooted at id.
std::string canonical(const PhyloTree& tree, int id) {
    const TreeNode& n = tree.node(id);
    if (n.is_leaf()) return n.label;
    std::vector<std::string> parts;
    for (int c : n.children) parts.push_back(canonical(tree, c));
    std::sort(parts.begin(), parts.end());
    std::string out = "(";
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out.push_back(',');
        out += parts[i];
    }
    out.push_back(')');
    return out;
}

}  // namespace

PhyloTree parse_newick(std::string_view text) { return PhyloTree(Parser(text).parse()); }

std::string to_newick(const PhyloTree& tree) {
    std::string out;
    write_node(out, tree, tree.root());
    out.push_back(';');
    return out;
}

PhyloTree star_tree(const std::vector<std::string>& labels) {
    std::vector<TreeNode> nodes(1);
    for (const auto& label : labels) {
        TreeNode leaf;
        leaf.label = label;
        leaf.parent = 0;
        nodes[0].children.push_back(static_cast<int>(nodes.size()));
        nodes.push_back(std::move(leaf));
    }
    return PhyloTree(std::move(nodes));
}

bool same_topology(const PhyloTree& a, const PhyloTree& b) {
    return canonical(a, a.root()) == canonical(b, b.root());
}

}  // namespace dsdm
