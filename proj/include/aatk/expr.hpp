#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace aatk {

/// Parse failure; `offset` is the byte position in the input text.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what), offset(offset) {}
    std::size_t offset;
};

/// Domain violation during evaluation; message names the offending subexpression.
class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ExprKind {
    Const, Var,
    Neg, Sin, Cos, Tan, Exp, Log, Sqrt,
    Add, Sub, Mul, Div, Pow
};

struct ExprNode;

/** Immutable symbolic expression over a fixed ordered variable list.
    Variables carry both the index into the binding vector and the name. */
class Expr {
public:
    Expr() = default;
    explicit Expr(std::shared_ptr<const ExprNode> n) : node_(std::move(n)) {}
    const ExprNode& node() const { return *node_; }
    const std::shared_ptr<const ExprNode>& ptr() const { return node_; }
    bool valid() const { return node_ != nullptr; }

private:
    std::shared_ptr<const ExprNode> node_;
};

struct ExprNode {
    ExprKind kind;
    double value = 0.0;          // Const
    int var_index = -1;          // Var
    std::string var_name;        // Var
    Expr a, b;                   // children (unary ops use a; Pow's b is Const)
};

// construction
Expr make_const(double v);
Expr make_var(int index, const std::string& name);
Expr make_unary(ExprKind k, Expr a);
Expr make_binary(ExprKind k, Expr a, Expr b);

/** Parses `text` against the ordered variable list `vars`.
    Grammar: numbers are decimal literals with optional exponent; identifiers
    are [A-Za-z_][A-Za-z0-9_]*; calls sin/cos/tan/exp/log/sqrt take one
    parenthesized argument; precedence pow > unary minus > mul/div > add/sub;
    pow is right-associative and its exponent must fold to a constant.
    No implicit multiplication. Throws ParseError with a byte offset. */
Expr parse_expr(const std::string& text, const std::vector<std::string>& vars);

/// Evaluates at the point `x` (aligned with the variable list). Throws EvalError.
double evaluate(const Expr& e, const Eigen::VectorXd& x);

/// Partial derivative with respect to variable index `v` (symbolic).
Expr differentiate(const Expr& e, int v);

/** Rule-based simplification: constant folding, identity rules (x+0, x*1, x*0,
    0/x, x/1, pow(x,1), pow(x,0), double negation) to a fixed point (at most 32
    passes), plus canonicalization of polynomial subtrees with exact cancellation
    of monomial coefficient pairs. A tree that folds to zero becomes the
    canonical zero node. Preserves pointwise value wherever the input is defined. */
Expr simplify(const Expr& e);

/// Renders to text that parse_expr accepts; print(parse(print(e))) == print(e).
std::string print_expr(const Expr& e);

/// True when the tree is exactly the constant 0.
bool is_zero_node(const Expr& e);

/// Structural equality of trees.
bool equal_trees(const Expr& a, const Expr& b);

struct ZeroCertificate {
    bool symbolic = false;   // simplify(e) is the zero node
    bool numeric = false;    // |e| < 1e-12 at each probe point where defined
    double max_abs = 0.0;
};

/** Hybrid zero test: symbolic fold plus evaluation at 64 deterministic points
    in [-1,1]^nvars (points where evaluation fails are skipped). */
ZeroCertificate zero_certificate(const Expr& e, int nvars);

}  // namespace aatk
