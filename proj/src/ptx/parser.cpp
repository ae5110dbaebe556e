#include "gpusim/ptx/parser.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <set>
#include <unordered_map>

#include "gpusim/error.hpp"
#include "gpusim/ptx/cfg.hpp"

namespace gpusim {

namespace {

enum class TokKind { ident, directive, reg, number, punct, end };

struct Token {
  TokKind kind = TokKind::end;
  std::string text;
  int line = 1;
  int col = 1;
};

class Lexer {
 public:
  Lexer(std::string_view src, const std::string& name) : src_(src), name_(name) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_space_and_comments();
      Token t;
      t.line = line_;
      t.col = col_;
      if (pos_ >= src_.size()) {
        t.kind = TokKind::end;
        out.push_back(t);
        return out;
      }
      const char c = src_[pos_];
      if (c == '.') {
        t.kind = TokKind::directive;
        t.text = take_while([](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.'; });
      } else if (c == '%') {
        t.kind = TokKind::reg;
        advance();
        t.text = "%" + take_while([](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '$'; });
        // special registers carry a component suffix (%tid.x)
        if (pos_ + 1 < src_.size() && src_[pos_] == '.' &&
            (src_[pos_ + 1] == 'x' || src_[pos_ + 1] == 'y' || src_[pos_ + 1] == 'z') &&
            (pos_ + 2 >= src_.size() || !std::isalnum(static_cast<unsigned char>(src_[pos_ + 2])))) {
          t.text += src_.substr(pos_, 2);
          advance();
          advance();
        }
        if (t.text.size() == 1) fail(t, "empty register name");
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        t.kind = TokKind::number;
        t.text = take_number();
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$') {
        t.kind = TokKind::ident;
        t.text = take_while([](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '$' || ch == '.'; });
      } else if (std::string_view("{}[](),;:@!+-<>=").find(c) != std::string_view::npos) {
        t.kind = TokKind::punct;
        t.text = std::string(1, c);
        advance();
      } else {
        fail(t, std::string("unexpected character '") + c + "'");
      }
      out.push_back(std::move(t));
    }
  }

 private:
  [[noreturn]] void fail(const Token& t, const std::string& msg) { throw ParseError(name_, t.line, t.col, msg); }

  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  template <typename Pred>
  std::string take_while(Pred p) {
    const size_t start = pos_;
    if (pos_ < src_.size()) advance();  // first char already validated by caller
    while (pos_ < src_.size() && p(src_[pos_])) advance();
    return std::string(src_.substr(start, pos_ - start));
  }

  std::string take_number() {
    const size_t start = pos_;
    if (src_[pos_] == '0' && pos_ + 1 < src_.size() &&
        (src_[pos_ + 1] == 'x' || src_[pos_ + 1] == 'X' || src_[pos_ + 1] == 'f' || src_[pos_ + 1] == 'F' ||
         src_[pos_ + 1] == 'd' || src_[pos_ + 1] == 'D')) {
      advance();
      advance();
      while (pos_ < src_.size() && std::isxdigit(static_cast<unsigned char>(src_[pos_]))) advance();
    } else {
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
      if (pos_ < src_.size() && src_[pos_] == '.') {
        advance();
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
      }
      if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
        advance();
        if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) advance();
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
      }
    }
    if (pos_ < src_.size() && src_[pos_] == 'U') advance();  // 0U style suffix
    return std::string(src_.substr(start, pos_ - start));
  }

  void skip_space_and_comments() {
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else if (c == '/' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '/') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else if (c == '/' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '*') {
        advance();
        advance();
        while (pos_ + 1 < src_.size() && !(src_[pos_] == '*' && src_[pos_ + 1] == '/')) advance();
        if (pos_ + 1 >= src_.size()) {
          Token t{TokKind::end, "", line_, col_};
          fail(t, "unterminated block comment");
        }
        advance();
        advance();
      } else {
        return;
      }
    }
  }

  std::string_view src_;
  const std::string& name_;
  size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

std::vector<std::string> split_dots(std::string_view s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    const size_t dot = s.find('.', start);
    const size_t end = dot == std::string_view::npos ? s.size() : dot;
    if (end > start) out.emplace_back(s.substr(start, end - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return out;
}

// Operand as parsed, before opcode-specific validation.
struct RawOperand {
  enum class Kind { reg, special, imm, symbol, address, vector, tex_address } kind = Kind::reg;
  std::string name;  // reg / symbol / texture name / address symbol base
  bool base_is_reg = false;
  Immediate imm;
  int64_t offset = 0;
  std::vector<std::string> regs;  // vector members or tex coordinates
  Token at;
};

class Parser {
 public:
  Parser(std::vector<Token> toks, std::string source_name) : toks_(std::move(toks)), source_(std::move(source_name)) {}

  PtxModule parse() {
    PtxModule m;
    m.module_id = source_;
    m.source_name = source_;
    while (peek().kind != TokKind::end) {
      const Token& t = peek();
      if (t.kind != TokKind::directive) fail(t, "expected a directive, got '" + t.text + "'");
      if (t.text == ".version") {
        next();
        expect_kind(TokKind::number, "version number");
      } else if (t.text == ".target") {
        next();
        expect_kind(TokKind::ident, "target name");
        while (accept_punct(",")) expect_kind(TokKind::ident, "target name");
      } else if (t.text == ".address_size") {
        next();
        const Token n = expect_kind(TokKind::number, "address size");
        if (n.text != "64") fail(n, "only 64-bit addressing is supported");
      } else if (t.text == ".visible" || t.text == ".extern" || t.text == ".weak") {
        next();
      } else if (t.text == ".global") {
        next();
        parse_global(m);
      } else if (t.text == ".tex") {
        next();
        parse_texref(m);
      } else if (t.text == ".entry") {
        next();
        KernelObject k = parse_entry();
        if (m.kernels.contains(k.name)) fail(t, "duplicate kernel '" + k.name + "' in module");
        if (m.globals.contains(k.name)) fail(t, "kernel '" + k.name + "' collides with a global");
        m.kernels.emplace(k.name, std::move(k));
      } else if (t.text == ".func") {
        throw UnsupportedOpcodeError(source_, t.line, t.col, ".func");
      } else {
        fail(t, "unsupported directive '" + t.text + "'");
      }
    }
    return m;
  }

 private:
  // ---- token helpers ----
  const Token& peek(size_t ahead = 0) const { return toks_[std::min(pos_ + ahead, toks_.size() - 1)]; }
  Token next() {
    Token t = peek();
    if (pos_ < toks_.size() - 1) ++pos_;
    return t;
  }
  [[noreturn]] void fail(const Token& t, const std::string& msg) const { throw ParseError(source_, t.line, t.col, msg); }

  bool is_punct(const Token& t, std::string_view p) const { return t.kind == TokKind::punct && t.text == p; }
  bool accept_punct(std::string_view p) {
    if (is_punct(peek(), p)) {
      next();
      return true;
    }
    return false;
  }
  Token expect_punct(std::string_view p) {
    if (!is_punct(peek(), p)) fail(peek(), "expected '" + std::string(p) + "', got '" + peek().text + "'");
    return next();
  }
  Token expect_kind(TokKind k, std::string_view what) {
    if (peek().kind != k) fail(peek(), "expected " + std::string(what) + ", got '" + peek().text + "'");
    return next();
  }

  uint64_t expect_uint(std::string_view what) {
    const Token t = expect_kind(TokKind::number, what);
    const Immediate imm = parse_number(t, false);
    if (imm.kind != Immediate::Kind::integer) fail(t, "expected integer " + std::string(what));
    return imm.bits;
  }

  Immediate parse_number(const Token& t, bool negative) const {
    Immediate imm;
    std::string s = t.text;
    if (!s.empty() && s.back() == 'U') s.pop_back();
    auto parse_hex = [&](std::string_view digits) {
      uint64_t v = 0;
      auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v, 16);
      if (ec != std::errc() || p != digits.data() + digits.size() || digits.empty()) fail(t, "malformed number '" + t.text + "'");
      return v;
    };
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'f' || s[1] == 'F')) {
      if (s.size() != 10) fail(t, "0f literal needs 8 hex digits");
      imm.kind = Immediate::Kind::float_bits32;
      imm.bits = parse_hex(std::string_view(s).substr(2));
      if (negative) imm.bits ^= 0x80000000u;
    } else if (s.size() > 2 && s[0] == '0' && (s[1] == 'd' || s[1] == 'D')) {
      if (s.size() != 18) fail(t, "0d literal needs 16 hex digits");
      imm.kind = Immediate::Kind::float_bits64;
      imm.bits = parse_hex(std::string_view(s).substr(2));
      if (negative) imm.bits ^= 0x8000000000000000ull;
    } else if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
      imm.bits = parse_hex(std::string_view(s).substr(2));
      if (negative) imm.bits = ~imm.bits + 1;
    } else if (s.find_first_of(".eE") != std::string::npos) {
      imm.kind = Immediate::Kind::float_decimal;
      char* end = nullptr;
      imm.value = std::strtod(s.c_str(), &end);
      if (end != s.c_str() + s.size()) fail(t, "malformed number '" + t.text + "'");
      if (negative) imm.value = -imm.value;
    } else {
      uint64_t v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 10);
      if (ec != std::errc() || p != s.data() + s.size()) fail(t, "malformed number '" + t.text + "'");
      imm.bits = negative ? ~v + 1 : v;
    }
    return imm;
  }

  Tag expect_type(std::string_view what) {
    const Token t = expect_kind(TokKind::directive, what);
    auto tag = parse_tag(std::string_view(t.text).substr(1));
    if (!tag || *tag == Tag::pred) {
      if (t.text == ".pred") return Tag::pred;
      fail(t, "unknown type '" + t.text + "'");
    }
    return *tag;
  }

  uint32_t parse_optional_align() {
    if (peek().kind == TokKind::directive && peek().text == ".align") {
      next();
      return static_cast<uint32_t>(expect_uint("alignment"));
    }
    return 0;
  }

  // ---- module-scope declarations ----
  void parse_global(PtxModule& m) {
    if (peek().kind == TokKind::directive && peek().text == ".texref") {
      next();
      const Token n = expect_kind(TokKind::ident, "texture name");
      expect_punct(";");
      add_texref(m, n);
      return;
    }
    GlobalDecl g;
    g.align = parse_optional_align();
    uint32_t vec = 1;
    if (peek().kind == TokKind::directive && (peek().text == ".v2" || peek().text == ".v4")) {
      vec = peek().text == ".v2" ? 2 : 4;
      next();
    }
    g.elem_type = expect_type("global type");
    if (g.elem_type == Tag::pred) fail(peek(), "predicate globals are not allowed");
    const Token n = expect_kind(TokKind::ident, "global name");
    g.name = n.text;
    g.count = vec;
    if (accept_punct("[")) {
      g.count = vec * static_cast<uint32_t>(expect_uint("array length"));
      expect_punct("]");
    }
    if (g.align == 0) g.align = width_bytes(g.elem_type);
    if (accept_punct("=")) {
      if (is_punct(peek(), "{")) {
        const Token& b = peek();
        throw BraceInitializerError(source_, b.line, b.col,
                                    "brace-enclosed array initializers are not supported (global '" + g.name + "')");
      }
      const bool neg = accept_punct("-");
      const Token v = expect_kind(TokKind::number, "initializer");
      g.init = parse_number(v, neg);
    }
    expect_punct(";");
    if (m.globals.contains(g.name) || m.kernels.contains(g.name)) fail(n, "duplicate global '" + g.name + "' in module");
    m.globals.emplace(g.name, std::move(g));
  }

  void parse_texref(PtxModule& m) {
    // .tex .u64 name;   or   .tex .texref name;
    if (peek().kind == TokKind::directive) next();
    const Token n = expect_kind(TokKind::ident, "texture name");
    expect_punct(";");
    add_texref(m, n);
  }

  void add_texref(PtxModule& m, const Token& n) {
    for (const auto& t : m.texref_decls)
      if (t == n.text) fail(n, "duplicate texture '" + n.text + "' in module");
    m.texref_decls.push_back(n.text);
    texrefs_.insert(n.text);
  }

  // ---- kernels ----
  KernelObject parse_entry() {
    KernelObject k;
    k.name = expect_kind(TokKind::ident, "kernel name").text;
    expect_punct("(");
    uint32_t offset = 0;
    if (!is_punct(peek(), ")")) {
      do {
        const Token pt = expect_kind(TokKind::directive, ".param");
        if (pt.text != ".param") fail(pt, "expected .param");
        KernelParam p;
        uint32_t align = parse_optional_align();
        p.type = expect_type("parameter type");
        if (p.type == Tag::pred) fail(pt, "predicate parameters are not allowed");
        // ".ptr.global .ptr" spreads over two tokens, so count across them
        int ptr_count = 0;
        while (peek().kind == TokKind::directive) {
          const Token a = next();
          const auto parts = split_dots(a.text);
          if (parts.empty() || parts[0] != "ptr") fail(a, "unexpected parameter attribute '" + a.text + "'");
          bool wants_align = false;
          for (const auto& part : parts) {
            if (part == "ptr") ++ptr_count;
            else if (part == "align") wants_align = true;
            else if (part != "global" && part != "const" && part != "shared" && part != "local")
              fail(a, "unexpected pointer attribute '" + part + "'");
          }
          if (wants_align) expect_uint("pointer alignment");
          p.kind = ptr_count >= 2 ? ParamKind::pointer_to_pointer : ParamKind::pointer;
          if (width_bits(p.type) != 64) fail(a, "pointer parameters must be 64-bit");
        }
        p.name = expect_kind(TokKind::ident, "parameter name").text;
        if (k.find_param(p.name)) fail(pt, "duplicate parameter '" + p.name + "'");
        if (align == 0) align = width_bytes(p.type);
        p.align = align;
        offset = (offset + align - 1) / align * align;
        p.offset = offset;
        offset += width_bytes(p.type);
        k.params.push_back(std::move(p));
      } while (accept_punct(","));
    }
    expect_punct(")");
    // performance directives carry no semantics here
    while (peek().kind == TokKind::directive &&
           (peek().text == ".maxntid" || peek().text == ".reqntid" || peek().text == ".minnctapersm" || peek().text == ".maxnreg")) {
      next();
      expect_uint("directive value");
      while (accept_punct(",")) expect_uint("directive value");
    }
    const Token open = expect_punct("{");
    parse_body(k);
    expect_punct("}");

    if (k.instructions.empty()) throw StructuralError("kernel '" + k.name + "' has no instructions");
    resolve_labels(k);
    compute_ipdom(k);
    (void)open;
    return k;
  }

  void declare_var(KernelObject& k, std::vector<VarDecl>& vars, uint32_t& total) {
    VarDecl v;
    v.align = parse_optional_align();
    v.elem_type = expect_type("variable type");
    const Token n = expect_kind(TokKind::ident, "variable name");
    v.name = n.text;
    if (accept_punct("[")) {
      v.count = static_cast<uint32_t>(expect_uint("array length"));
      expect_punct("]");
    }
    if (is_punct(peek(), "=")) fail(peek(), "initializers on shared/local variables are not supported");
    expect_punct(";");
    if (k.find_shared(v.name) || k.find_local(v.name) || k.find_param(v.name)) fail(n, "duplicate variable '" + v.name + "'");
    const uint32_t a = std::max<uint32_t>(v.align, width_bytes(v.elem_type));
    v.align = a;
    total = (total + a - 1) / a * a;
    v.offset = total;
    total += v.count * width_bytes(v.elem_type);
    vars.push_back(std::move(v));
  }

  void parse_body(KernelObject& k) {
    reg_ids_.clear();
    pending_labels_.clear();
    label_pos_.clear();
    while (!is_punct(peek(), "}")) {
      const Token t = peek();
      if (t.kind == TokKind::end) fail(t, "unexpected end of input in kernel body");
      if (t.kind == TokKind::directive) {
        next();
        if (t.text == ".reg") {
          parse_reg_decl(k);
        } else if (t.text == ".shared") {
          declare_var(k, k.shared_vars, k.shared_bytes);
        } else if (t.text == ".local") {
          declare_var(k, k.local_vars, k.local_bytes_per_thread);
        } else {
          fail(t, "unsupported directive '" + t.text + "' in kernel body");
        }
        continue;
      }
      if (t.kind == TokKind::ident && is_punct(peek(1), ":")) {
        next();
        next();
        if (label_pos_.contains(t.text)) fail(t, "duplicate label '" + t.text + "'");
        label_pos_[t.text] = static_cast<int>(k.instructions.size());
        pending_labels_.push_back(t.text);
        continue;
      }
      parse_instruction(k);
    }
    if (!pending_labels_.empty()) fail(peek(), "label '" + pending_labels_.back() + "' does not precede an instruction");
  }

  void parse_reg_decl(KernelObject& k) {
    const Tag ty = expect_type("register type");
    do {
      const Token r = expect_kind(TokKind::reg, "register name");
      if (parse_special_reg(r.text)) fail(r, "cannot redeclare special register " + r.text);
      if (accept_punct("<")) {
        const uint64_t n = expect_uint("register count");
        expect_punct(">");
        for (uint64_t i = 0; i < n; ++i) declare_reg(k, r, r.text + std::to_string(i), ty);
      } else {
        declare_reg(k, r, r.text, ty);
      }
    } while (accept_punct(","));
    expect_punct(";");
  }

  void declare_reg(KernelObject& k, const Token& at, const std::string& name, Tag ty) {
    auto [it, inserted] = k.reg_decl_types.emplace(name, ty);
    if (!inserted && it->second != ty) fail(at, "register " + name + " redeclared with a different type");
  }

  RegId use_reg(KernelObject& k, const Token& at, const std::string& name) {
    if (!k.reg_decl_types.contains(name)) fail(at, "undeclared register " + name);
    auto it = reg_ids_.find(name);
    if (it != reg_ids_.end()) return it->second;
    const RegId id = static_cast<RegId>(k.reg_names.size());
    k.reg_names.push_back(name);
    reg_ids_.emplace(name, id);
    return id;
  }

  RawOperand parse_operand() {
    RawOperand op;
    op.at = peek();
    const Token t = peek();
    if (t.kind == TokKind::reg) {
      next();
      if (parse_special_reg(t.text)) {
        op.kind = RawOperand::Kind::special;
      } else {
        op.kind = RawOperand::Kind::reg;
      }
      op.name = t.text;
      return op;
    }
    if (t.kind == TokKind::number || is_punct(t, "-")) {
      const bool neg = accept_punct("-");
      const Token n = expect_kind(TokKind::number, "number");
      op.kind = RawOperand::Kind::imm;
      op.imm = parse_number(n, neg);
      return op;
    }
    if (t.kind == TokKind::ident) {
      next();
      op.kind = RawOperand::Kind::symbol;
      op.name = t.text;
      return op;
    }
    if (is_punct(t, "{")) {
      next();
      op.kind = RawOperand::Kind::vector;
      do {
        op.regs.push_back(expect_kind(TokKind::reg, "register").text);
      } while (accept_punct(","));
      expect_punct("}");
      return op;
    }
    if (is_punct(t, "[")) {
      next();
      const Token b = next();
      if (b.kind == TokKind::reg) {
        if (parse_special_reg(b.text)) fail(b, "special registers cannot be address bases");
        op.base_is_reg = true;
      } else if (b.kind != TokKind::ident) {
        fail(b, "expected register or symbol in address");
      }
      op.name = b.text;
      if (accept_punct(",")) {
        // texture address: [tex, {x, y}]
        op.kind = RawOperand::Kind::tex_address;
        expect_punct("{");
        do {
          op.regs.push_back(expect_kind(TokKind::reg, "coordinate register").text);
        } while (accept_punct(","));
        expect_punct("}");
        expect_punct("]");
        return op;
      }
      op.kind = RawOperand::Kind::address;
      if (is_punct(peek(), "+") || is_punct(peek(), "-")) {
        const bool neg = next().text == "-";
        const Token n = expect_kind(TokKind::number, "address offset");
        const Immediate imm = parse_number(n, neg);
        if (imm.kind != Immediate::Kind::integer) fail(n, "address offsets must be integers");
        op.offset = static_cast<int64_t>(imm.bits);
      }
      expect_punct("]");
      return op;
    }
    fail(t, "unexpected token '" + t.text + "' in operand");
  }

  void parse_instruction(KernelObject& k) {
    Instruction in;
    if (accept_punct("@")) {
      Guard g;
      g.negate = accept_punct("!");
      const Token r = expect_kind(TokKind::reg, "predicate register");
      g.reg = use_reg(k, r, r.text);
      if (k.reg_decl_types.at(r.text) != Tag::pred) fail(r, "guard " + r.text + " is not a predicate register");
      in.guard = g;
    }
    const Token opt = expect_kind(TokKind::ident, "opcode");
    const auto parts = split_dots(opt.text);
    std::vector<RawOperand> ops;
    if (!is_punct(peek(), ";")) {
      do {
        ops.push_back(parse_operand());
      } while (accept_punct(","));
    }
    expect_punct(";");
    decode(k, in, opt, parts, ops);
    for (const auto& l : pending_labels_) k.labels[static_cast<int>(k.instructions.size())].push_back(l);
    pending_labels_.clear();
    k.instructions.push_back(std::move(in));
  }

  // ---- opcode decoding ----
  void unsupported(const Token& t) const { throw UnsupportedOpcodeError(source_, t.line, t.col, t.text); }

  void want_count(const Token& t, const std::vector<RawOperand>& ops, size_t n) const {
    if (ops.size() != n)
      fail(t, "'" + t.text + "' takes " + std::to_string(n) + " operands, got " + std::to_string(ops.size()));
  }

  RegId dst_reg(KernelObject& k, const RawOperand& o) {
    if (o.kind != RawOperand::Kind::reg) fail(o.at, "destination must be a register");
    return use_reg(k, o.at, o.name);
  }

  Operand value_operand(KernelObject& k, const RawOperand& o, Tag ty, bool allow_symbol) {
    switch (o.kind) {
      case RawOperand::Kind::reg:
        return RegOperand{use_reg(k, o.at, o.name)};
      case RawOperand::Kind::special:
        return SpecialOperand{*parse_special_reg(o.name)};
      case RawOperand::Kind::imm:
        if (is_int(ty) && o.imm.kind != Immediate::Kind::integer) fail(o.at, "float literal used with integer type");
        if (ty == Tag::pred) fail(o.at, "immediates cannot be predicates");
        if (ty == Tag::f16 && o.imm.kind != Immediate::Kind::integer) fail(o.at, "f16 immediates must be raw integer bits");
        return o.imm;
      case RawOperand::Kind::symbol:
        if (!allow_symbol) fail(o.at, "symbol '" + o.name + "' not allowed here");
        return SymbolOperand{o.name};
      default:
        fail(o.at, "unexpected operand form");
    }
  }

  Operand address_operand(KernelObject& k, const RawOperand& o) {
    if (o.kind != RawOperand::Kind::address) fail(o.at, "expected an address operand [..]");
    AddressOperand a;
    if (o.base_is_reg) a.base = use_reg(k, o.at, o.name);
    else a.base = o.name;
    a.offset = o.offset;
    return a;
  }

  static bool int_type(Tag t) { return is_int(t); }
  static bool arith_float(Tag t) { return t == Tag::f32 || t == Tag::f64; }

  Tag type_part(const Token& t, const std::string& part) const {
    auto tag = parse_tag(part);
    if (!tag || *tag == Tag::pred) fail(t, "bad type suffix ." + part + " on '" + t.text + "'");
    return *tag;
  }

  void decode(KernelObject& k, Instruction& in, const Token& t, const std::vector<std::string>& parts,
              const std::vector<RawOperand>& ops) {
    const std::string& name = parts[0];
    std::vector<std::string> mods(parts.begin() + 1, parts.end());
    auto take_mod = [&](std::initializer_list<std::string_view> options) -> std::string {
      for (auto it = mods.begin(); it != mods.end(); ++it)
        for (auto o : options)
          if (*it == o) {
            std::string s = *it;
            mods.erase(it);
            return s;
          }
      return {};
    };
    auto last_type = [&]() -> Tag {
      if (mods.empty()) fail(t, "missing type suffix on '" + t.text + "'");
      const Tag ty = type_part(t, mods.back());
      mods.pop_back();
      return ty;
    };
    auto no_more_mods = [&]() {
      if (!mods.empty()) fail(t, "unsupported modifier ." + mods.front() + " on '" + t.text + "'");
    };

    if (name == "mov") {
      in.opcode = Opcode::mov;
      if (mods.size() == 1 && mods[0] == "pred") {
        in.type = Tag::pred;
        mods.clear();
      } else {
        in.type = last_type();
      }
      no_more_mods();
      want_count(t, ops, 2);
      in.dsts.push_back(dst_reg(k, ops[0]));
      if (ops[1].kind == RawOperand::Kind::symbol && width_bits(in.type) != 64)
        fail(ops[1].at, "symbol addresses need a 64-bit mov");
      in.srcs.push_back(value_operand(k, ops[1], in.type, true));
    } else if (name == "ld" || name == "st") {
      in.opcode = name == "ld" ? Opcode::ld : Opcode::st;
      take_mod({"volatile"});
      const std::string sp = take_mod({"global", "shared", "local", "param"});
      if (sp.empty()) fail(t, "'" + t.text + "' needs an explicit state space");
      in.space = sp == "global" ? Space::global : sp == "shared" ? Space::shared : sp == "local" ? Space::local : Space::param;
      if (in.opcode == Opcode::st && in.space == Space::param) fail(t, "stores to the param space are not allowed");
      in.type = last_type();
      no_more_mods();
      want_count(t, ops, 2);
      if (in.opcode == Opcode::ld) {
        in.dsts.push_back(dst_reg(k, ops[0]));
        in.srcs.push_back(address_operand(k, ops[1]));
      } else {
        in.srcs.push_back(address_operand(k, ops[0]));
        in.srcs.push_back(value_operand(k, ops[1], in.type, false));
      }
    } else if (name == "add" || name == "sub") {
      in.opcode = name == "add" ? Opcode::add : Opcode::sub;
      const std::string rn = take_mod({"rn"});
      in.type = last_type();
      no_more_mods();
      if (!int_type(in.type) && !arith_float(in.type)) fail(t, "illegal type for " + name);
      if (!rn.empty()) {
        if (!arith_float(in.type)) fail(t, ".rn only applies to float " + name);
        in.rounding = Rounding::rn;
      }
      three_operand(k, in, t, ops);
    } else if (name == "mul" || name == "mad") {
      in.opcode = name == "mul" ? Opcode::mul : Opcode::mad;
      const std::string mode = take_mod({"lo", "hi", "wide"});
      const std::string rn = take_mod({"rn"});
      in.type = last_type();
      no_more_mods();
      if (int_type(in.type)) {
        if (mode.empty()) fail(t, "integer " + name + " needs .lo, .hi or .wide");
        if (!rn.empty()) fail(t, ".rn on integer " + name);
        in.mul_mode = mode == "lo" ? MulMode::lo : mode == "hi" ? MulMode::hi : MulMode::wide;
        if (in.mul_mode == MulMode::wide && width_bits(in.type) == 64) fail(t, ".wide needs a 16- or 32-bit type");
      } else if (arith_float(in.type)) {
        if (!mode.empty()) fail(t, "." + mode + " on float " + name);
        if (!rn.empty()) in.rounding = Rounding::rn;
      } else {
        fail(t, "illegal type for " + name);
      }
      if (in.opcode == Opcode::mul) three_operand(k, in, t, ops);
      else four_operand(k, in, t, ops);
    } else if (name == "fma") {
      in.opcode = Opcode::fma;
      if (take_mod({"rn"}).empty()) fail(t, "fma needs .rn");
      in.rounding = Rounding::rn;
      in.type = last_type();
      no_more_mods();
      if (!arith_float(in.type)) fail(t, "fma needs .f32 or .f64");
      four_operand(k, in, t, ops);
    } else if (name == "div") {
      in.opcode = Opcode::div;
      const std::string r = take_mod({"rn", "approx", "full"});
      in.type = last_type();
      no_more_mods();
      if (int_type(in.type)) {
        if (!r.empty()) fail(t, "." + r + " on integer div");
      } else if (arith_float(in.type)) {
        in.rounding = Rounding::rn;
      } else {
        fail(t, "illegal type for div");
      }
      three_operand(k, in, t, ops);
    } else if (name == "rem") {
      in.opcode = Opcode::rem;
      in.type = last_type();
      no_more_mods();
      if (!int_type(in.type)) fail(t, "rem needs an integer type");
      three_operand(k, in, t, ops);
    } else if (name == "brev") {
      in.opcode = Opcode::brev;
      in.type = last_type();
      no_more_mods();
      if (in.type != Tag::u32 && in.type != Tag::u64) fail(t, "brev needs .b32 or .b64");
      want_count(t, ops, 2);
      in.dsts.push_back(dst_reg(k, ops[0]));
      in.srcs.push_back(value_operand(k, ops[1], in.type, false));
    } else if (name == "bfe") {
      in.opcode = Opcode::bfe;
      in.type = last_type();
      no_more_mods();
      if (in.type != Tag::u32 && in.type != Tag::s32 && in.type != Tag::u64 && in.type != Tag::s64)
        fail(t, "bfe needs .u32, .s32, .u64 or .s64");
      want_count(t, ops, 4);
      in.dsts.push_back(dst_reg(k, ops[0]));
      in.srcs.push_back(value_operand(k, ops[1], in.type, false));
      in.srcs.push_back(value_operand(k, ops[2], Tag::u32, false));
      in.srcs.push_back(value_operand(k, ops[3], Tag::u32, false));
    } else if (name == "cvt") {
      in.opcode = Opcode::cvt;
      const std::string r = take_mod({"rn", "rz", "rm", "rp", "rni", "rzi", "rmi", "rpi"});
      if (!take_mod({"sat"}).empty()) fail(t, "cvt.sat is not supported");
      if (mods.size() != 2) fail(t, "cvt needs destination and source types");
      in.type = type_part(t, mods[0]);
      in.src_type = type_part(t, mods[1]);
      mods.clear();
      const Tag d = in.type, s = in.src_type;
      const bool ii = is_int(d) && is_int(s);
      const bool hf = (d == Tag::f16 && s == Tag::f32) || (d == Tag::f32 && s == Tag::f16);
      const bool i2f = d == Tag::f32 && is_int(s);
      const bool f2i = is_int(d) && s == Tag::f32;
      if (!(ii || hf || i2f || f2i)) fail(t, "unsupported conversion ." + mods_text(d, s));
      if (r == "rn") in.rounding = Rounding::rn;
      else if (r == "rz") in.rounding = Rounding::rz;
      else if (r == "rm") in.rounding = Rounding::rm;
      else if (r == "rp") in.rounding = Rounding::rp;
      else if (r == "rni") in.rounding = Rounding::rni;
      else if (r == "rzi") in.rounding = Rounding::rzi;
      else if (r == "rmi") in.rounding = Rounding::rmi;
      else if (r == "rpi") in.rounding = Rounding::rpi;
      if (f2i && (in.rounding == Rounding::none || in.rounding == Rounding::rn || in.rounding == Rounding::rz ||
                  in.rounding == Rounding::rm || in.rounding == Rounding::rp))
        fail(t, "float-to-integer cvt needs an integer rounding mode (.rni/.rzi/.rmi/.rpi)");
      if ((i2f || (d == Tag::f16 && s == Tag::f32)) && in.rounding != Rounding::none && in.rounding != Rounding::rn)
        fail(t, "only round-to-nearest-even is supported for this conversion");
      if ((i2f || (d == Tag::f16 && s == Tag::f32)) && in.rounding == Rounding::none) in.rounding = Rounding::rn;
      if ((ii || (d == Tag::f32 && s == Tag::f16)) && in.rounding != Rounding::none)
        fail(t, "rounding modifier not allowed on this conversion");
      want_count(t, ops, 2);
      in.dsts.push_back(dst_reg(k, ops[0]));
      in.srcs.push_back(value_operand(k, ops[1], in.src_type, false));
    } else if (name == "setp") {
      in.opcode = Opcode::setp;
      const std::string c = take_mod({"eq", "ne", "lt", "le", "gt", "ge", "lo", "ls", "hi", "hs"});
      if (c.empty()) fail(t, "setp needs a comparison");
      in.cmp = c == "eq"   ? CmpOp::eq
               : c == "ne" ? CmpOp::ne
               : (c == "lt" || c == "lo") ? CmpOp::lt
               : (c == "le" || c == "ls") ? CmpOp::le
               : (c == "gt" || c == "hi") ? CmpOp::gt
                                          : CmpOp::ge;
      in.type = last_type();
      no_more_mods();
      if (!int_type(in.type) && !arith_float(in.type)) fail(t, "illegal type for setp");
      want_count(t, ops, 3);
      in.dsts.push_back(pred_dst(k, ops[0]));
      in.srcs.push_back(value_operand(k, ops[1], in.type, false));
      in.srcs.push_back(value_operand(k, ops[2], in.type, false));
    } else if (name == "selp") {
      in.opcode = Opcode::selp;
      in.type = last_type();
      no_more_mods();
      if (!int_type(in.type) && !arith_float(in.type)) fail(t, "illegal type for selp");
      want_count(t, ops, 4);
      in.dsts.push_back(dst_reg(k, ops[0]));
      in.srcs.push_back(value_operand(k, ops[1], in.type, false));
      in.srcs.push_back(value_operand(k, ops[2], in.type, false));
      in.srcs.push_back(pred_src(k, ops[3]));
    } else if (name == "bra") {
      in.opcode = Opcode::bra;
      if (!take_mod({"uni"}).empty()) in.uniform = true;
      no_more_mods();
      want_count(t, ops, 1);
      if (ops[0].kind != RawOperand::Kind::symbol) fail(ops[0].at, "branch target must be a label");
      in.target_label = ops[0].name;
      branch_sites_.emplace_back(static_cast<int>(k.instructions.size()), ops[0].at);
    } else if (name == "bar") {
      in.opcode = Opcode::bar;
      if (take_mod({"sync"}).empty()) fail(t, "only bar.sync is supported");
      no_more_mods();
      want_count(t, ops, 1);
      if (ops[0].kind != RawOperand::Kind::imm || ops[0].imm.kind != Immediate::Kind::integer || ops[0].imm.bits != 0)
        fail(ops[0].at, "only barrier 0 is supported");
      in.srcs.push_back(ops[0].imm);
    } else if (name == "tex") {
      in.opcode = Opcode::tex;
      const std::string g = take_mod({"1d", "2d"});
      if (g.empty()) fail(t, "tex needs .1d or .2d");
      in.geom = g == "1d" ? TexGeom::d1 : TexGeom::d2;
      if (take_mod({"v4"}).empty()) fail(t, "tex needs .v4");
      if (mods.size() != 2) fail(t, "tex needs destination and coordinate types");
      in.type = type_part(t, mods[0]);
      in.src_type = type_part(t, mods[1]);
      mods.clear();
      if (in.type != Tag::f32 && in.type != Tag::u32 && in.type != Tag::s32) fail(t, "tex destination must be .f32, .u32 or .s32");
      if (in.src_type != Tag::s32) fail(t, "tex coordinates must be .s32");
      want_count(t, ops, 2);
      if (ops[0].kind != RawOperand::Kind::vector || ops[0].regs.size() != 4) fail(ops[0].at, "tex destination must be {d0,d1,d2,d3}");
      for (const auto& r : ops[0].regs) in.dsts.push_back(use_reg(k, ops[0].at, r));
      if (ops[1].kind != RawOperand::Kind::tex_address || ops[1].base_is_reg) fail(ops[1].at, "tex source must be [texture, {coords}]");
      const size_t want = in.geom == TexGeom::d1 ? 1 : 2;
      if (ops[1].regs.size() != want) fail(ops[1].at, "wrong number of texture coordinates");
      if (!texrefs_.contains(ops[1].name)) fail(ops[1].at, "undeclared texture '" + ops[1].name + "'");
      in.texref = ops[1].name;
      for (const auto& r : ops[1].regs) in.srcs.push_back(RegOperand{use_reg(k, ops[1].at, r)});
    } else if (name == "atom") {
      in.opcode = Opcode::atom;
      if (take_mod({"global"}).empty()) fail(t, "atom needs .global");
      if (take_mod({"add"}).empty()) fail(t, "only atom.add is supported");
      in.space = Space::global;
      in.type = last_type();
      no_more_mods();
      if (in.type != Tag::u32 && in.type != Tag::s32) fail(t, "atom.add needs .u32 or .s32");
      want_count(t, ops, 3);
      in.dsts.push_back(dst_reg(k, ops[0]));
      in.srcs.push_back(address_operand(k, ops[1]));
      in.srcs.push_back(value_operand(k, ops[2], in.type, false));
    } else if (name == "exit" || name == "ret") {
      in.opcode = name == "exit" ? Opcode::exit : Opcode::ret;
      no_more_mods();
      want_count(t, ops, 0);
    } else {
      unsupported(t);
    }
  }

  static std::string mods_text(Tag d, Tag s) { return std::string(tag_name(d)) + "." + std::string(tag_name(s)); }

  RegId pred_dst(KernelObject& k, const RawOperand& o) {
    const RegId r = dst_reg(k, o);
    if (k.reg_decl_types.at(o.name) != Tag::pred) fail(o.at, o.name + " is not a predicate register");
    return r;
  }

  Operand pred_src(KernelObject& k, const RawOperand& o) {
    if (o.kind != RawOperand::Kind::reg) fail(o.at, "expected a predicate register");
    const RegId r = use_reg(k, o.at, o.name);
    if (k.reg_decl_types.at(o.name) != Tag::pred) fail(o.at, o.name + " is not a predicate register");
    return RegOperand{r};
  }

  void three_operand(KernelObject& k, Instruction& in, const Token& t, const std::vector<RawOperand>& ops) {
    want_count(t, ops, 3);
    in.dsts.push_back(dst_reg(k, ops[0]));
    in.srcs.push_back(value_operand(k, ops[1], in.type, false));
    in.srcs.push_back(value_operand(k, ops[2], in.type, false));
  }

  void four_operand(KernelObject& k, Instruction& in, const Token& t, const std::vector<RawOperand>& ops) {
    want_count(t, ops, 4);
    in.dsts.push_back(dst_reg(k, ops[0]));
    in.srcs.push_back(value_operand(k, ops[1], in.type, false));
    in.srcs.push_back(value_operand(k, ops[2], in.type, false));
    // the addend of mad.wide has the doubled width
    const Tag c_type = in.mul_mode == MulMode::wide ? (is_signed_int(in.type) ? (in.type == Tag::s16 ? Tag::s32 : Tag::s64)
                                                                              : (in.type == Tag::u16 ? Tag::u32 : Tag::u64))
                                                    : in.type;
    in.srcs.push_back(value_operand(k, ops[3], c_type, false));
  }

  void resolve_labels(KernelObject& k) {
    for (const auto& [idx, at] : branch_sites_) {
      auto& in = k.instructions[static_cast<size_t>(idx)];
      auto it = label_pos_.find(in.target_label);
      if (it == label_pos_.end()) fail(at, "unknown label '" + in.target_label + "'");
      in.target = it->second;
    }
    branch_sites_.clear();
  }

  std::vector<Token> toks_;
  size_t pos_ = 0;
  std::string source_;
  std::unordered_map<std::string, RegId> reg_ids_;
  std::vector<std::string> pending_labels_;
  std::unordered_map<std::string, int> label_pos_;
  std::vector<std::pair<int, Token>> branch_sites_;
  std::set<std::string> texrefs_;
};

}  // namespace

PtxModule parse_module(std::string_view source, std::string source_name) {
  Lexer lex(source, source_name);
  Parser p(lex.run(), source_name);
  return p.parse();
}

}  // namespace gpusim
