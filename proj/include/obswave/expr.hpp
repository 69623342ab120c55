#pragma once

// Scalar field expressions of (t, x, y) used for coefficients, forcings,
// initial data and identity test fields. Evaluation is templated on the
// scalar type so fields can be differentiated with obswave::ad::Dual.
//
//   expr    := term (('+'|'-') term)*
//   term    := unary (('*'|'/') unary)*
//   unary   := ('+'|'-') unary | power
//   power   := primary ('^' unary)?
//   primary := number | name | name '(' expr ')' | '(' expr ')'
//
// Names: t, x, y, pi. Functions: sin cos exp log sqrt abs tanh.

#include <array>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "obswave/ad.hpp"
#include "obswave/errors.hpp"

namespace obswave {

class Expr {
public:
    Expr() : Expr(std::string("0")) {}
    explicit Expr(std::string source) : source_(std::move(source)) {
        Parser p{source_, 0, nodes_};
        root_ = p.parse_expr();
        p.skip_ws();
        if (p.pos != source_.size()) p.fail("unexpected trailing input");
        for (const auto& n : nodes_) {
            if (n.op == Op::VarT) uses_t_ = true;
            if (n.op == Op::VarX || n.op == Op::VarY) uses_x_ = true;
        }
    }
    static Expr constant(double c) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", c);
        return Expr(std::string(buf));
    }

    const std::string& source() const { return source_; }
    bool depends_on_time() const { return uses_t_; }
    bool is_constant() const { return !uses_t_ && !uses_x_; }

    template <class S>
    S operator()(const S& t, const S& x, const S& y) const { return eval<S>(root_, t, x, y); }

    double at(double t, const std::array<double, 2>& x) const { return (*this)(t, x[0], x[1]); }

private:
    enum class Op { Num, VarT, VarX, VarY, Add, Sub, Mul, Div, Pow, IPow, Neg, Sin, Cos, Exp, Log, Sqrt, Abs, Tanh };
    struct Node {
        Op op;
        double value = 0.0;
        int a = -1;
        int b = -1;
    };

    struct Parser {
        const std::string& s;
        std::size_t pos;
        std::vector<Node>& nodes;

        [[noreturn]] void fail(const std::string& msg) const {
            throw Error(ErrorKind::ConfigError,
                        "expression '" + s + "' at column " + std::to_string(pos + 1) + ": " + msg);
        }
        void skip_ws() {
            while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        }
        bool accept(char c) {
            skip_ws();
            if (pos < s.size() && s[pos] == c) { ++pos; return true; }
            return false;
        }
        int push(Node n) {
            nodes.push_back(n);
            return static_cast<int>(nodes.size()) - 1;
        }
        int parse_expr() {
            int lhs = parse_term();
            for (;;) {
                if (accept('+')) lhs = push({Op::Add, 0.0, lhs, parse_term()});
                else if (accept('-')) lhs = push({Op::Sub, 0.0, lhs, parse_term()});
                else return lhs;
            }
        }
        int parse_term() {
            int lhs = parse_unary();
            for (;;) {
                if (accept('*')) lhs = push({Op::Mul, 0.0, lhs, parse_unary()});
                else if (accept('/')) lhs = push({Op::Div, 0.0, lhs, parse_unary()});
                else return lhs;
            }
        }
        int parse_unary() {
            if (accept('-')) return push({Op::Neg, 0.0, parse_unary(), -1});
            if (accept('+')) return parse_unary();
            return parse_power();
        }
        int parse_power() {
            int base = parse_primary();
            if (!accept('^')) return base;
            int expo = parse_unary();
            const Node& e = nodes[expo];
            if (e.op == Op::Num && e.value == std::floor(e.value) && std::fabs(e.value) <= 64)
                return push({Op::IPow, e.value, base, -1});
            return push({Op::Pow, 0.0, base, expo});
        }
        int parse_primary() {
            skip_ws();
            if (pos >= s.size()) fail("unexpected end of expression");
            const char c = s[pos];
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
                const char* begin = s.c_str() + pos;
                char* end = nullptr;
                const double v = std::strtod(begin, &end);
                if (end == begin) fail("malformed number");
                pos += static_cast<std::size_t>(end - begin);
                return push({Op::Num, v});
            }
            if (std::isalpha(static_cast<unsigned char>(c))) {
                std::size_t start = pos;
                while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
                const std::string name = s.substr(start, pos - start);
                if (name == "t") return push({Op::VarT});
                if (name == "x") return push({Op::VarX});
                if (name == "y") return push({Op::VarY});
                if (name == "pi") return push({Op::Num, std::numbers::pi});
                Op fn;
                if (name == "sin") fn = Op::Sin;
                else if (name == "cos") fn = Op::Cos;
                else if (name == "exp") fn = Op::Exp;
                else if (name == "log") fn = Op::Log;
                else if (name == "sqrt") fn = Op::Sqrt;
                else if (name == "abs") fn = Op::Abs;
                else if (name == "tanh") fn = Op::Tanh;
                else { pos = start; fail("unknown name '" + name + "'"); }
                if (!accept('(')) fail("expected '(' after " + name);
                int arg = parse_expr();
                if (!accept(')')) fail("expected ')'");
                return push({fn, 0.0, arg, -1});
            }
            if (accept('(')) {
                int inner = parse_expr();
                if (!accept(')')) fail("expected ')'");
                return inner;
            }
            fail(std::string("unexpected character '") + c + "'");
        }
    };

    template <class S>
    S eval(int i, const S& t, const S& x, const S& y) const {
        using namespace obswave::ad;
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        switch (n.op) {
        case Op::Num: return S(n.value);
        case Op::VarT: return t;
        case Op::VarX: return x;
        case Op::VarY: return y;
        case Op::Add: return eval(n.a, t, x, y) + eval(n.b, t, x, y);
        case Op::Sub: return eval(n.a, t, x, y) - eval(n.b, t, x, y);
        case Op::Mul: return eval(n.a, t, x, y) * eval(n.b, t, x, y);
        case Op::Div: return eval(n.a, t, x, y) / eval(n.b, t, x, y);
        case Op::IPow: return ipow(eval(n.a, t, x, y), static_cast<int>(n.value));
        case Op::Pow: return exp(eval(n.b, t, x, y) * log(eval(n.a, t, x, y)));
        case Op::Neg: return -eval(n.a, t, x, y);
        case Op::Sin: return sin(eval(n.a, t, x, y));
        case Op::Cos: return cos(eval(n.a, t, x, y));
        case Op::Exp: return exp(eval(n.a, t, x, y));
        case Op::Log: return log(eval(n.a, t, x, y));
        case Op::Sqrt: return sqrt(eval(n.a, t, x, y));
        case Op::Abs: return fabs_ad(eval(n.a, t, x, y));
        case Op::Tanh: return tanh(eval(n.a, t, x, y));
        }
        return S(0.0);
    }

    std::string source_;
    std::vector<Node> nodes_;
    int root_ = -1;
    bool uses_t_ = false;
    bool uses_x_ = false;
};

} // namespace obswave
