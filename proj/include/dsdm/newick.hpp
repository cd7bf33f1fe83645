#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dsdm/error.hpp"

namespace dsdm {

struct TreeNode {
    std::string label;
    std::optional<double> length;
    int parent = -1;
    std::vector<int> children;
    // Dirichlet concentration for each child split; internal nodes only.
    std::vector<double> split_concentration;

    bool is_leaf() const noexcept { return children.empty(); }
};

// Rooted tree with labeled leaves. Nodes are stored in preorder, so leaf
// order matches the order of appearance in the Newick text.
class PhyloTree {
public:
    PhyloTree() = default;
    explicit PhyloTree(std::vector<TreeNode> nodes);

    const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
    const TreeNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    int root() const noexcept { return 0; }

    std::vector<int> leaves() const;
    std::vector<std::string> leaf_labels() const;
    std::size_t n_leaves() const noexcept;

    void set_split_concentration(int id, std::vector<double> conc);

private:
    void validate() const;
    std::vector<TreeNode> nodes_;
};

class NewickError : public ValidationError {
public:
    NewickError(const std::string& what, std::size_t offset);
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

// Strict recursive-descent parser:
//
//   tree     := subtree ';'
//   subtree  := '(' subtree (',' subtree)* ')' [label] [':' number]
//             | label [':' number]
//
// Labels are bare words or single-quoted strings ('' escapes a quote).
// Whitespace between tokens is ignored. Leaves must be labeled, labels must
// be unique, and every internal node needs at least two children. Errors
// carry the byte offset where parsing stopped.
PhyloTree parse_newick(std::string_view text);

std::string to_newick(const PhyloTree& tree);

// Root with one leaf per label.
PhyloTree star_tree(const std::vector<std::string>& labels);

// Unordered rooted-tree equality on leaf labels and topology.
bool same_topology(const PhyloTree& a, const PhyloTree& b);

}  // namespace dsdm
