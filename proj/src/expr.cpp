#include "aatk/expr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>

#include "aatk/util.hpp"

namespace aatk {

namespace {  // internal

/// Cap on fixed-point simplification passes.
const int MAX_SIMPLIFY_PASSES = 32;
/// Caps for the polynomial canonicalization pass.
const int MAX_POLY_TERMS = 512;
const int MAX_POLY_EXPONENT = 32;

bool is_const(const Expr& e, double v) {
    return e.node().kind == ExprKind::Const && e.node().value == v;
}

bool is_integer(double v) {
    return std::isfinite(v) && v == std::floor(v) && std::abs(v) < 1e15;
}

/// Integer power by squaring; well-defined for negative bases.
double int_pow(double base, long long n) {
    if (n < 0) return 1.0 / int_pow(base, -n);
    double r = 1.0, b = base;
    while (n > 0) {
        if (n & 1) r *= b;
        b *= b;
        n >>= 1;
    }
    return r;
}

}  // namespace

Expr make_const(double v) {
    auto n = std::make_shared<ExprNode>();
    n->kind = ExprKind::Const;
    n->value = v;
    return Expr(n);
}

Expr make_var(int index, const std::string& name) {
    auto n = std::make_shared<ExprNode>();
    n->kind = ExprKind::Var;
    n->var_index = index;
    n->var_name = name;
    return Expr(n);
}

Expr make_unary(ExprKind k, Expr a) {
    auto n = std::make_shared<ExprNode>();
    n->kind = k;
    n->a = std::move(a);
    return Expr(n);
}

Expr make_binary(ExprKind k, Expr a, Expr b) {
    auto n = std::make_shared<ExprNode>();
    n->kind = k;
    n->a = std::move(a);
    n->b = std::move(b);
    return Expr(n);
}

// --------------------------------------------------------------------------
// parser

namespace {

struct Parser {
    const std::string& text;
    const std::vector<std::string>& vars;
    std::size_t pos = 0;

    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }

    bool peek(char c) {
        skip_ws();
        return pos < text.size() && text[pos] == c;
    }

    bool consume(char c) {
        if (peek(c)) { ++pos; return true; }
        return false;
    }

    [[noreturn]] void fail(const std::string& msg) {
        skip_ws();
        throw ParseError(msg + " at offset " + std::to_string(pos), pos);
    }

    Expr parse() {
        Expr e = sum();
        skip_ws();
        if (pos != text.size()) fail("unexpected trailing input");
        return e;
    }

    Expr sum() {
        Expr e = term();
        for (;;) {
            if (consume('+')) e = make_binary(ExprKind::Add, e, term());
            else if (consume('-')) e = make_binary(ExprKind::Sub, e, term());
            else return e;
        }
    }

    Expr term() {
        Expr e = factor();
        for (;;) {
            if (consume('*')) e = make_binary(ExprKind::Mul, e, factor());
            else if (consume('/')) e = make_binary(ExprKind::Div, e, factor());
            else return e;
        }
    }

    // unary minus binds looser than pow: -x^2 == -(x^2)
    Expr factor() {
        if (consume('-')) return make_unary(ExprKind::Neg, factor());
        return power();
    }

    Expr power() {
        Expr base = primary();
        if (consume('^')) {
            std::size_t at = pos;
            Expr exp = factor();  // right-associative, allows x^-2
            std::optional<double> c = fold_const(exp);
            if (!c) throw ParseError("exponent must be constant at offset " + std::to_string(at), at);
            return make_binary(ExprKind::Pow, base, make_const(*c));
        }
        return base;
    }

    /// Constant-folds a closed subtree; nullopt if any variable appears.
    std::optional<double> fold_const(const Expr& e) {
        const ExprNode& n = e.node();
        switch (n.kind) {
            case ExprKind::Const: return n.value;
            case ExprKind::Var: return std::nullopt;
            default: break;
        }
        std::optional<double> a = n.a.valid() ? fold_const(n.a) : std::nullopt;
        if (!a) return std::nullopt;
        switch (n.kind) {
            case ExprKind::Neg: return -*a;
            case ExprKind::Sin: return std::sin(*a);
            case ExprKind::Cos: return std::cos(*a);
            case ExprKind::Tan: return std::tan(*a);
            case ExprKind::Exp: return std::exp(*a);
            case ExprKind::Log: return *a > 0 ? std::optional<double>(std::log(*a)) : std::nullopt;
            case ExprKind::Sqrt: return *a >= 0 ? std::optional<double>(std::sqrt(*a)) : std::nullopt;
            default: break;
        }
        std::optional<double> b = n.b.valid() ? fold_const(n.b) : std::nullopt;
        if (!b) return std::nullopt;
        switch (n.kind) {
            case ExprKind::Add: return *a + *b;
            case ExprKind::Sub: return *a - *b;
            case ExprKind::Mul: return *a * *b;
            case ExprKind::Div: return *b != 0 ? std::optional<double>(*a / *b) : std::nullopt;
            case ExprKind::Pow:
                if (is_integer(*b)) return int_pow(*a, static_cast<long long>(*b));
                return *a > 0 ? std::optional<double>(std::pow(*a, *b)) : std::nullopt;
            default: return std::nullopt;
        }
    }

    Expr primary() {
        skip_ws();
        if (pos >= text.size()) fail("unexpected end of input");
        char c = text[pos];
        if (c == '(') {
            ++pos;
            Expr e = sum();
            if (!consume(')')) fail("expected ')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
        fail("unexpected character '" + std::string(1, c) + "'");
    }

    Expr number() {
        std::size_t start = pos;
        bool any_digit = false;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) { ++pos; any_digit = true; }
        if (pos < text.size() && text[pos] == '.') {
            ++pos;
            while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) { ++pos; any_digit = true; }
        }
        if (!any_digit) { pos = start; fail("malformed number"); }
        if (pos < text.size() && (text[pos] == 'e' || text[pos] == 'E')) {
            std::size_t mark = pos;
            ++pos;
            if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) ++pos;
            if (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
                while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
            } else {
                pos = mark;  // 'e' belongs to a following identifier; not part of the number
            }
        }
        return make_const(std::stod(text.substr(start, pos - start)));
    }

    Expr identifier() {
        std::size_t start = pos;
        while (pos < text.size() &&
               (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_'))
            ++pos;
        std::string name = text.substr(start, pos - start);
        static const std::map<std::string, ExprKind> calls = {
            {"sin", ExprKind::Sin}, {"cos", ExprKind::Cos}, {"tan", ExprKind::Tan},
            {"exp", ExprKind::Exp}, {"log", ExprKind::Log}, {"sqrt", ExprKind::Sqrt}};
        auto call = calls.find(name);
        if (call != calls.end() && peek('(')) {
            ++pos;
            Expr arg = sum();
            if (!consume(')')) fail("expected ')'");
            return make_unary(call->second, arg);
        }
        for (std::size_t i = 0; i < vars.size(); ++i)
            if (vars[i] == name) return make_var(static_cast<int>(i), name);
        throw ParseError("unknown identifier '" + name + "' at offset " + std::to_string(start), start);
    }
};

}  // namespace

Expr parse_expr(const std::string& text, const std::vector<std::string>& vars) {
    Parser p{text, vars};
    return p.parse();
}

// --------------------------------------------------------------------------
// evaluation

double evaluate(const Expr& e, const Eigen::VectorXd& x) {
    const ExprNode& n = e.node();
    switch (n.kind) {
        case ExprKind::Const: return n.value;
        case ExprKind::Var:
            if (n.var_index < 0 || n.var_index >= x.size())
                throw EvalError("variable '" + n.var_name + "' out of range of the binding vector");
            return x[n.var_index];
        case ExprKind::Neg: return -evaluate(n.a, x);
        case ExprKind::Sin: return std::sin(evaluate(n.a, x));
        case ExprKind::Cos: return std::cos(evaluate(n.a, x));
        case ExprKind::Tan: return std::tan(evaluate(n.a, x));
        case ExprKind::Exp: return std::exp(evaluate(n.a, x));
        case ExprKind::Log: {
            double v = evaluate(n.a, x);
            if (v <= 0) throw EvalError("log of nonpositive value in " + print_expr(e));
            return std::log(v);
        }
        case ExprKind::Sqrt: {
            double v = evaluate(n.a, x);
            if (v < 0) throw EvalError("sqrt of negative value in " + print_expr(e));
            return std::sqrt(v);
        }
        case ExprKind::Add: return evaluate(n.a, x) + evaluate(n.b, x);
        case ExprKind::Sub: return evaluate(n.a, x) - evaluate(n.b, x);
        case ExprKind::Mul: return evaluate(n.a, x) * evaluate(n.b, x);
        case ExprKind::Div: {
            double num = evaluate(n.a, x), den = evaluate(n.b, x);
            if (den == 0) throw EvalError("division by zero in " + print_expr(e));
            return num / den;
        }
        case ExprKind::Pow: {
            double base = evaluate(n.a, x), c = n.b.node().value;
            if (is_integer(c)) {
                if (base == 0 && c < 0) throw EvalError("zero raised to negative power in " + print_expr(e));
                return int_pow(base, static_cast<long long>(c));
            }
            if (base < 0) throw EvalError("negative base with non-integer exponent in " + print_expr(e));
            if (base == 0 && c < 0) throw EvalError("zero raised to negative power in " + print_expr(e));
            return std::pow(base, c);
        }
    }
    throw EvalError("corrupt expression node");
}

// --------------------------------------------------------------------------
// differentiation

Expr differentiate(const Expr& e, int v) {
    const ExprNode& n = e.node();
    switch (n.kind) {
        case ExprKind::Const: return make_const(0);
        case ExprKind::Var: return make_const(n.var_index == v ? 1 : 0);
        case ExprKind::Neg: return make_unary(ExprKind::Neg, differentiate(n.a, v));
        case ExprKind::Sin:
            return make_binary(ExprKind::Mul, make_unary(ExprKind::Cos, n.a), differentiate(n.a, v));
        case ExprKind::Cos:
            return make_unary(ExprKind::Neg,
                make_binary(ExprKind::Mul, make_unary(ExprKind::Sin, n.a), differentiate(n.a, v)));
        case ExprKind::Tan:
            return make_binary(ExprKind::Div, differentiate(n.a, v),
                make_binary(ExprKind::Pow, make_unary(ExprKind::Cos, n.a), make_const(2)));
        case ExprKind::Exp:
            return make_binary(ExprKind::Mul, make_unary(ExprKind::Exp, n.a), differentiate(n.a, v));
        case ExprKind::Log:
            return make_binary(ExprKind::Div, differentiate(n.a, v), n.a);
        case ExprKind::Sqrt:
            return make_binary(ExprKind::Div, differentiate(n.a, v),
                make_binary(ExprKind::Mul, make_const(2), make_unary(ExprKind::Sqrt, n.a)));
        case ExprKind::Add:
            return make_binary(ExprKind::Add, differentiate(n.a, v), differentiate(n.b, v));
        case ExprKind::Sub:
            return make_binary(ExprKind::Sub, differentiate(n.a, v), differentiate(n.b, v));
        case ExprKind::Mul:
            return make_binary(ExprKind::Add,
                make_binary(ExprKind::Mul, differentiate(n.a, v), n.b),
                make_binary(ExprKind::Mul, n.a, differentiate(n.b, v)));
        case ExprKind::Div:
            if (n.b.node().kind == ExprKind::Const)
                return make_binary(ExprKind::Div, differentiate(n.a, v), n.b);
            return make_binary(ExprKind::Div,
                make_binary(ExprKind::Sub,
                    make_binary(ExprKind::Mul, differentiate(n.a, v), n.b),
                    make_binary(ExprKind::Mul, n.a, differentiate(n.b, v))),
                make_binary(ExprKind::Pow, n.b, make_const(2)));
        case ExprKind::Pow: {
            // d(u^c) = c * u^(c-1) * u'
            double c = n.b.node().value;
            return make_binary(ExprKind::Mul,
                make_binary(ExprKind::Mul, make_const(c),
                    make_binary(ExprKind::Pow, n.a, make_const(c - 1))),
                differentiate(n.a, v));
        }
    }
    throw EvalError("corrupt expression node");
}

// --------------------------------------------------------------------------
// simplification

namespace {

/// One bottom-up rewrite pass; sets `changed` when any rule fired.
Expr rewrite(const Expr& e, bool& changed) {
    const ExprNode& n = e.node();
    if (n.kind == ExprKind::Const || n.kind == ExprKind::Var) return e;

    Expr a = n.a.valid() ? rewrite(n.a, changed) : Expr();
    Expr b = n.b.valid() ? rewrite(n.b, changed) : Expr();
    Expr cur = b.valid() ? make_binary(n.kind, a, b)
                         : make_unary(n.kind, a);

    auto fire = [&](Expr r) { changed = true; return r; };

    // constant folding; skipped when the fold would hit a domain violation
    bool all_const = a.node().kind == ExprKind::Const && (!b.valid() || b.node().kind == ExprKind::Const);
    if (all_const) {
        try {
            double v = evaluate(cur, Eigen::VectorXd());
            if (std::isfinite(v)) return fire(make_const(v));
        } catch (const EvalError&) { /* leave unevaluated */ }
    }

    switch (n.kind) {
        case ExprKind::Neg:
            if (a.node().kind == ExprKind::Neg) return fire(a.node().a);
            break;
        case ExprKind::Add:
            if (is_const(a, 0)) return fire(b);
            if (is_const(b, 0)) return fire(a);
            if (b.node().kind == ExprKind::Neg && equal_trees(a, b.node().a)) return fire(make_const(0));
            if (a.node().kind == ExprKind::Neg && equal_trees(a.node().a, b)) return fire(make_const(0));
            break;
        case ExprKind::Sub:
            if (is_const(b, 0)) return fire(a);
            if (is_const(a, 0)) return fire(make_unary(ExprKind::Neg, b));
            if (equal_trees(a, b)) return fire(make_const(0));
            break;
        case ExprKind::Mul:
            if (is_const(a, 0) || is_const(b, 0)) return fire(make_const(0));
            if (is_const(a, 1)) return fire(b);
            if (is_const(b, 1)) return fire(a);
            break;
        case ExprKind::Div:
            if (is_const(a, 0)) return fire(make_const(0));
            if (is_const(b, 1)) return fire(a);
            break;
        case ExprKind::Pow:
            if (is_const(b, 1)) return fire(a);
            if (is_const(b, 0)) return fire(make_const(1));
            break;
        default:
            break;
    }
    return cur;
}

/** Multivariate polynomial as monomial exponent vector -> coefficient
    contribution list. Contributions are kept unsummed so that pairs built from
    identical floating-point factors cancel exactly during collapse. */
struct Poly {
    std::map<std::vector<int>, std::vector<double>> terms;

    std::size_t size() const { return terms.size(); }

    std::size_t contributions() const {
        std::size_t c = 0;
        for (const auto& t : terms) c += t.second.size();
        return c;
    }

    void add_term(const std::vector<int>& key, double c) {
        if (c == 0.0) return;
        terms[key].push_back(c);
    }
};

int max_var_index(const Expr& e) {
    const ExprNode& n = e.node();
    int m = n.kind == ExprKind::Var ? n.var_index : -1;
    if (n.a.valid()) m = std::max(m, max_var_index(n.a));
    if (n.b.valid()) m = std::max(m, max_var_index(n.b));
    return m;
}

std::optional<Poly> to_poly(const Expr& e, int nvars);

std::optional<Poly> poly_mul(const Poly& p, const Poly& q) {
    if (p.contributions() * q.contributions() > 4096) return std::nullopt;
    Poly r;
    for (const auto& pt : p.terms)
        for (const auto& qt : q.terms) {
            std::vector<int> key(pt.first.size());
            for (std::size_t i = 0; i < key.size(); ++i) {
                key[i] = pt.first[i] + qt.first[i];
                if (key[i] > MAX_POLY_EXPONENT) return std::nullopt;
            }
            for (double pc : pt.second)
                for (double qc : qt.second) r.add_term(key, pc * qc);
            if (r.size() > MAX_POLY_TERMS) return std::nullopt;
        }
    return r;
}

std::optional<Poly> to_poly(const Expr& e, int nvars) {
    const ExprNode& n = e.node();
    switch (n.kind) {
        case ExprKind::Const: {
            Poly p;
            p.add_term(std::vector<int>(nvars, 0), n.value);
            return p;
        }
        case ExprKind::Var: {
            Poly p;
            std::vector<int> key(nvars, 0);
            key[n.var_index] = 1;
            p.add_term(key, 1.0);
            return p;
        }
        case ExprKind::Neg: {
            auto a = to_poly(n.a, nvars);
            if (!a) return std::nullopt;
            Poly r;
            for (const auto& t : a->terms)
                for (double c : t.second) r.add_term(t.first, -c);
            return r;
        }
        case ExprKind::Add:
        case ExprKind::Sub: {
            auto a = to_poly(n.a, nvars), b = to_poly(n.b, nvars);
            if (!a || !b) return std::nullopt;
            Poly r = *a;
            double sgn = n.kind == ExprKind::Add ? 1.0 : -1.0;
            for (const auto& t : b->terms)
                for (double c : t.second) r.add_term(t.first, sgn * c);
            if (r.size() > MAX_POLY_TERMS) return std::nullopt;
            return r;
        }
        case ExprKind::Mul: {
            auto a = to_poly(n.a, nvars), b = to_poly(n.b, nvars);
            if (!a || !b) return std::nullopt;
            return poly_mul(*a, *b);
        }
        case ExprKind::Div: {
            if (n.b.node().kind != ExprKind::Const || n.b.node().value == 0) return std::nullopt;
            auto a = to_poly(n.a, nvars);
            if (!a) return std::nullopt;
            double d = n.b.node().value;
            Poly r;
            for (const auto& t : a->terms)
                for (double c : t.second) r.add_term(t.first, c / d);
            return r;
        }
        case ExprKind::Pow: {
            double c = n.b.node().value;
            if (!is_integer(c) || c < 0 || c > MAX_POLY_EXPONENT) return std::nullopt;
            auto a = to_poly(n.a, nvars);
            if (!a) return std::nullopt;
            Poly r;
            r.add_term(std::vector<int>(nvars, 0), 1.0);
            for (int i = 0; i < static_cast<int>(c); ++i) {
                auto next = poly_mul(r, *a);
                if (!next) return std::nullopt;
                r = *next;
            }
            return r;
        }
        default:
            return std::nullopt;  // transcendental
    }
}

/** Sums a monomial's coefficient contributions. Pairs that are exact negations
    cancel first, so algebraically-zero coefficients built from identical
    floating-point factors vanish exactly. */
double collapse_contributions(std::vector<double> cs) {
    for (std::size_t i = 0; i < cs.size(); ++i) {
        if (cs[i] == 0.0) continue;
        for (std::size_t j = i + 1; j < cs.size(); ++j) {
            if (cs[j] == -cs[i]) {
                cs[i] = 0.0;
                cs[j] = 0.0;
                break;
            }
        }
    }
    double s = 0.0;
    for (double c : cs) s += c;
    return s;
}

/// Rebuilds a canonical tree from a collected polynomial (graded-lex order).
Expr poly_to_expr(const Poly& p, const std::vector<const ExprNode*>& var_nodes) {
    struct Term { std::vector<int> key; double coeff; };
    std::vector<Term> terms;
    for (const auto& t : p.terms) {
        double c = collapse_contributions(t.second);
        if (c != 0.0) terms.push_back({t.first, c});
    }
    std::sort(terms.begin(), terms.end(), [](const Term& x, const Term& y) {
        int dx = 0, dy = 0;
        for (int e : x.key) dx += e;
        for (int e : y.key) dy += e;
        if (dx != dy) return dx < dy;
        return x.key < y.key;
    });
    if (terms.empty()) return make_const(0);

    auto monomial = [&](const Term& t) -> Expr {
        Expr prod;
        for (std::size_t v = 0; v < t.key.size(); ++v) {
            if (t.key[v] == 0) continue;
            const ExprNode* vn = var_nodes[v];
            Expr factor = make_var(vn->var_index, vn->var_name);
            if (t.key[v] > 1)
                factor = make_binary(ExprKind::Pow, factor, make_const(t.key[v]));
            prod = prod.valid() ? make_binary(ExprKind::Mul, prod, factor) : factor;
        }
        double c = std::abs(t.coeff);
        if (!prod.valid()) return make_const(c);
        if (c != 1.0) prod = make_binary(ExprKind::Mul, make_const(c), prod);
        return prod;
    };

    Expr acc;
    for (const Term& t : terms) {
        Expr m = monomial(t);
        if (!acc.valid())
            acc = t.coeff < 0 ? make_unary(ExprKind::Neg, m) : m;
        else
            acc = make_binary(t.coeff < 0 ? ExprKind::Sub : ExprKind::Add, acc, m);
    }
    return acc;
}

void collect_var_nodes(const Expr& e, std::vector<const ExprNode*>& vars) {
    const ExprNode& n = e.node();
    if (n.kind == ExprKind::Var) {
        if (n.var_index >= 0 && n.var_index < static_cast<int>(vars.size()) && !vars[n.var_index])
            vars[n.var_index] = &n;
    }
    if (n.a.valid()) collect_var_nodes(n.a, vars);
    if (n.b.valid()) collect_var_nodes(n.b, vars);
}

/// Replaces maximal polynomial subtrees with their canonical collected form.
Expr normalize_poly(const Expr& e) {
    int nvars = max_var_index(e) + 1;
    std::vector<const ExprNode*> var_nodes(std::max(nvars, 0), nullptr);
    collect_var_nodes(e, var_nodes);
    auto p = to_poly(e, nvars);
    if (p) return poly_to_expr(*p, var_nodes);

    const ExprNode& n = e.node();
    if (n.kind == ExprKind::Const || n.kind == ExprKind::Var) return e;
    Expr a = n.a.valid() ? normalize_poly(n.a) : Expr();
    if (n.kind == ExprKind::Pow)  // exponent is a bare constant, leave it
        return make_binary(ExprKind::Pow, a, n.b);
    Expr b = n.b.valid() ? normalize_poly(n.b) : Expr();
    return b.valid() ? make_binary(n.kind, a, b) : make_unary(n.kind, a);
}

Expr rewrite_to_fixpoint(Expr e) {
    for (int pass = 0; pass < MAX_SIMPLIFY_PASSES; ++pass) {
        bool changed = false;
        e = rewrite(e, changed);
        if (!changed) break;
    }
    return e;
}

}  // namespace

Expr simplify(const Expr& e) {
    Expr r = rewrite_to_fixpoint(e);
    r = normalize_poly(r);
    return rewrite_to_fixpoint(r);
}

// --------------------------------------------------------------------------
// printing

namespace {

int precedence(ExprKind k) {
    switch (k) {
        case ExprKind::Add: case ExprKind::Sub: return 1;
        case ExprKind::Mul: case ExprKind::Div: return 2;
        case ExprKind::Neg: return 3;
        case ExprKind::Pow: return 4;
        default: return 5;
    }
}

void print_node(const Expr& e, std::string& out, int parent_prec, bool rhs) {
    const ExprNode& n = e.node();
    int prec = precedence(n.kind);
    bool paren = prec < parent_prec || (rhs && prec == parent_prec && parent_prec != 5);
    switch (n.kind) {
        case ExprKind::Const: {
            std::string s = fmt17(n.value);
            bool neg = !s.empty() && s[0] == '-';
            if (neg && parent_prec > 1) out += "(";
            out += s;
            if (neg && parent_prec > 1) out += ")";
            return;
        }
        case ExprKind::Var: out += n.var_name; return;
        case ExprKind::Neg: {
            // parenthesized whenever a reparse would bind the minus differently,
            // so printing is stable across parse/print round trips
            bool wrap = parent_prec > 1;
            if (wrap) out += "(";
            out += "-";
            print_node(n.a, out, prec + 1, false);
            if (wrap) out += ")";
            return;
        }
        case ExprKind::Sin: case ExprKind::Cos: case ExprKind::Tan:
        case ExprKind::Exp: case ExprKind::Log: case ExprKind::Sqrt: {
            static const char* names[] = {"sin", "cos", "tan", "exp", "log", "sqrt"};
            out += names[static_cast<int>(n.kind) - static_cast<int>(ExprKind::Sin)];
            out += "(";
            print_node(n.a, out, 0, false);
            out += ")";
            return;
        }
        case ExprKind::Add: case ExprKind::Sub: case ExprKind::Mul:
        case ExprKind::Div: case ExprKind::Pow: {
            if (paren) out += "(";
            // pow is right-associative: parenthesize compound bases instead
            int lp = n.kind == ExprKind::Pow ? prec + 1 : prec;
            int rp = n.kind == ExprKind::Pow ? prec : prec;
            print_node(n.a, out, lp, false);
            switch (n.kind) {
                case ExprKind::Add: out += " + "; break;
                case ExprKind::Sub: out += " - "; break;
                case ExprKind::Mul: out += "*"; break;
                case ExprKind::Div: out += "/"; break;
                default: out += "^"; break;
            }
            print_node(n.b, out, rp, n.kind != ExprKind::Pow);
            if (paren) out += ")";
            return;
        }
    }
}

}  // namespace

std::string print_expr(const Expr& e) {
    std::string out;
    print_node(e, out, 0, false);
    return out;
}

bool is_zero_node(const Expr& e) {
    return e.valid() && e.node().kind == ExprKind::Const && e.node().value == 0.0;
}

bool equal_trees(const Expr& a, const Expr& b) {
    if (a.ptr() == b.ptr()) return true;
    const ExprNode& x = a.node();
    const ExprNode& y = b.node();
    if (x.kind != y.kind) return false;
    switch (x.kind) {
        case ExprKind::Const: return x.value == y.value;
        case ExprKind::Var: return x.var_index == y.var_index && x.var_name == y.var_name;
        default:
            if (x.a.valid() != y.a.valid() || x.b.valid() != y.b.valid()) return false;
            if (x.a.valid() && !equal_trees(x.a, y.a)) return false;
            if (x.b.valid() && !equal_trees(x.b, y.b)) return false;
            return true;
    }
}

ZeroCertificate zero_certificate(const Expr& e, int nvars) {
    ZeroCertificate cert;
    cert.symbolic = is_zero_node(simplify(e));
    Rng rng(0xce27ULL);
    cert.numeric = true;
    for (int k = 0; k < 64; ++k) {
        Eigen::VectorXd x(nvars);
        for (int i = 0; i < nvars; ++i) x[i] = rng.uniform(-1.0, 1.0);
        try {
            double v = evaluate(e, x);
            cert.max_abs = std::max(cert.max_abs, std::abs(v));
            if (std::abs(v) >= 1e-12) cert.numeric = false;
        } catch (const EvalError&) {
            // outside the expression's domain: skip the probe
        }
    }
    return cert;
}

}  // namespace aatk
