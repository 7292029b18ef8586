use std::collections::HashMap;

use crate::ir::{
    verify_module, AffineMap, Attr, Attrs, BinaryOp, Dim, ElementType, FuncOp, IteratorKind, Opcode, Operation,
    ProgramModule, ScalarBody, ScalarOp, SourceLocation, TensorType, ValueId, MAX_RANK,
};

use super::ParseError;

/// Parses and verifies a module. Syntax errors carry the offending location.
pub fn parse_module(text: &str) -> Result<ProgramModule, ParseError> {
    let module = Parser::new(text).module()?;
    let diags = verify_module(&module);
    if diags.is_empty() {
        Ok(module)
    } else {
        Err(ParseError::VerificationFailed(diags))
    }
}

type PResult<T> = Result<T, ParseError>;

/// Attribute value before the op's result type is known.
enum RawAttr {
    Ready(Attr),
    /// `dense<[...]>` literal list, encoded once the element type is known.
    DenseList(Vec<(String, SourceLocation)>),
}

pub(super) struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
    aliases: HashMap<String, AffineMap>,
}

impl<'a> Parser<'a> {
    pub(super) fn new(text: &'a str) -> Self {
        Self { src: text.as_bytes(), pos: 0, line: 1, col: 1, aliases: HashMap::new() }
    }

    pub(super) fn loc(&self) -> SourceLocation {
        SourceLocation { line: self.line, column: self.col }
    }

    pub(super) fn err<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(ParseError::Syntax { loc: self.loc(), message: message.into() })
    }

    fn err_at<T>(loc: SourceLocation, message: impl Into<String>) -> PResult<T> {
        Err(ParseError::Syntax { loc, message: message.into() })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else if c & 0xC0 != 0x80 {
            // count characters, not UTF-8 continuation bytes
            self.col += 1;
        }
        Some(c)
    }

    pub(super) fn skip_ws(&mut self) {
        loop {
            match self.peek() {
                Some(b' ' | b'\t' | b'\r' | b'\n') => {
                    self.bump();
                }
                Some(b'/') if self.src.get(self.pos + 1) == Some(&b'/') => {
                    while !matches!(self.peek(), None | Some(b'\n')) {
                        self.bump();
                    }
                }
                _ => return,
            }
        }
    }

    pub(super) fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.src.len()
    }

    /// Consumes `tok` if it comes next (after whitespace).
    pub(super) fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(tok.as_bytes()) {
            // keywords must not run into a following identifier character
            let last_word = tok.as_bytes().last().is_some_and(|c| c.is_ascii_alphanumeric());
            let next = self.src.get(self.pos + tok.len()).copied();
            if last_word && next.is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_') {
                return false;
            }
            for _ in 0..tok.len() {
                self.bump();
            }
            true
        } else {
            false
        }
    }

    pub(super) fn expect(&mut self, tok: &str) -> PResult<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            let found = self.describe_next();
            self.err(format!("expected `{tok}`, found {found}"))
        }
    }

    fn describe_next(&mut self) -> String {
        self.skip_ws();
        match self.peek() {
            None => "end of input".into(),
            Some(_) => {
                let rest = &self.src[self.pos..];
                let end = rest
                    .iter()
                    .position(|c| c.is_ascii_whitespace())
                    .unwrap_or(rest.len())
                    .min(16);
                format!("`{}`", String::from_utf8_lossy(&rest[..end]))
            }
        }
    }

    /// `[A-Za-z_][A-Za-z0-9_.]*`
    pub(super) fn ident(&mut self) -> PResult<String> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {}
            _ => {
                let found = self.describe_next();
                return self.err(format!("expected an identifier, found {found}"));
            }
        }
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_' || c == b'.') {
            self.bump();
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    /// A `%name` token; returns the name without the sigil.
    pub(super) fn value_name(&mut self) -> PResult<String> {
        self.skip_ws();
        if self.peek() != Some(b'%') {
            let found = self.describe_next();
            return self.err(format!("expected a `%` value name, found {found}"));
        }
        self.bump();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_') {
            self.bump();
        }
        if start == self.pos {
            return self.err("empty value name");
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    /// Raw text of a numeric literal (sign, digits, `.`, exponent, hex).
    pub(super) fn number_text(&mut self) -> PResult<String> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.peek(), Some(b'-' | b'+')) {
            self.bump();
        }
        while let Some(c) = self.peek() {
            let sign_after_exp = (c == b'-' || c == b'+')
                && self.pos > start
                && matches!(self.src[self.pos - 1], b'e' | b'E')
                && !self.src[start..self.pos].starts_with(b"0x");
            if c.is_ascii_alphanumeric() || c == b'.' || sign_after_exp {
                self.bump();
            } else {
                break;
            }
        }
        if self.pos == start {
            let found = self.describe_next();
            return self.err(format!("expected a number, found {found}"));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    pub(super) fn integer(&mut self) -> PResult<i64> {
        let loc = {
            self.skip_ws();
            self.loc()
        };
        let t = self.number_text()?;
        match t.parse::<i64>() {
            Ok(v) => Ok(v),
            Err(_) => Self::err_at(loc, format!("invalid integer `{t}`")),
        }
    }

    fn module(&mut self) -> PResult<ProgramModule> {
        while self.eat("#") {
            let name = self.ident()?;
            self.expect("=")?;
            let map = self.affine_map()?;
            self.aliases.insert(name, map);
        }
        self.expect("module")?;
        self.expect("{")?;
        let mut funcs = Vec::new();
        while !self.eat("}") {
            funcs.push(self.func()?);
        }
        if !self.at_end() {
            let found = self.describe_next();
            return self.err(format!("unexpected {found} after module"));
        }
        Ok(ProgramModule::new(funcs))
    }

    pub(super) fn elem_type(&mut self) -> PResult<ElementType> {
        self.skip_ws();
        let loc = self.loc();
        let name = self.ident()?;
        ElementType::from_name(&name)
            .map_or_else(|| Self::err_at(loc, format!("unknown element type `{name}`")), Ok)
    }

    pub(super) fn tensor_type(&mut self) -> PResult<TensorType> {
        self.expect("tensor")?;
        if self.peek() != Some(b'<') {
            return self.err("expected `<` after `tensor`");
        }
        self.bump();
        let mut shape = Vec::new();
        loop {
            let loc = self.loc();
            match self.peek() {
                Some(b'?') => {
                    self.bump();
                    shape.push(Dim::Dynamic);
                }
                Some(c) if c.is_ascii_digit() => {
                    let start = self.pos;
                    while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                        self.bump();
                    }
                    let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                    let n: u64 = match text.parse() {
                        Ok(n) => n,
                        Err(_) => return Self::err_at(loc, format!("dimension `{text}` is out of range")),
                    };
                    shape.push(Dim::Static(n));
                }
                Some(c) if c.is_ascii_alphabetic() => {
                    let elem = self.elem_type()?;
                    if self.peek() != Some(b'>') {
                        return self.err("expected `>` to close the tensor type");
                    }
                    self.bump();
                    if shape.len() > MAX_RANK {
                        return Self::err_at(loc, format!("tensor rank {} exceeds {MAX_RANK}", shape.len()));
                    }
                    return Ok(TensorType::new(shape, elem));
                }
                None => return self.err("unterminated tensor type"),
                Some(_) => return self.err("expected a dimension or element type"),
            }
            if self.peek() != Some(b'x') {
                return self.err("expected `x` after a dimension");
            }
            self.bump();
        }
    }

    pub(super) fn affine_map(&mut self) -> PResult<AffineMap> {
        self.skip_ws();
        if self.eat("#") {
            let loc = self.loc();
            let name = self.ident()?;
            return match self.aliases.get(&name) {
                Some(m) => Ok(m.clone()),
                None => Self::err_at(loc, format!("unknown map alias `#{name}`")),
            };
        }
        self.expect("affine_map")?;
        self.expect("<")?;
        self.expect("(")?;
        let mut dims: Vec<String> = Vec::new();
        if !self.eat(")") {
            loop {
                let loc = {
                    self.skip_ws();
                    self.loc()
                };
                let d = self.ident()?;
                if dims.contains(&d) {
                    return Self::err_at(loc, format!("duplicate dimension `{d}`"));
                }
                dims.push(d);
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        self.expect("->")?;
        self.expect("(")?;
        let mut results = Vec::new();
        if !self.eat(")") {
            loop {
                let loc = {
                    self.skip_ws();
                    self.loc()
                };
                let d = self.ident()?;
                match dims.iter().position(|x| *x == d) {
                    Some(p) => results.push(p),
                    None => return Self::err_at(loc, format!("`{d}` is not a dimension of this map")),
                }
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        self.expect(">")?;
        Ok(AffineMap::new(dims.len(), results))
    }

    fn func(&mut self) -> PResult<FuncOp> {
        self.expect("func")?;
        self.expect("@")?;
        let name = self.ident()?;
        let mut names: HashMap<String, ValueId> = HashMap::new();
        let mut types = Vec::new();
        self.expect("(")?;
        if !self.eat(")") {
            loop {
                self.skip_ws();
                let loc = self.loc();
                let n = self.value_name()?;
                self.expect(":")?;
                let t = self.tensor_type()?;
                if names.insert(n.clone(), ValueId(types.len() as u32)).is_some() {
                    return Self::err_at(loc, format!("argument %{n} defined twice"));
                }
                types.push(t);
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        let num_args = types.len();
        self.expect("->")?;
        let mut result_types = Vec::new();
        if self.eat("(") {
            if !self.eat(")") {
                loop {
                    result_types.push(self.tensor_type()?);
                    if self.eat(")") {
                        break;
                    }
                    self.expect(",")?;
                }
            }
        } else {
            result_types.push(self.tensor_type()?);
        }
        self.expect("{")?;
        let mut f = FuncOp { name, num_args, result_types, body: vec![], value_types: types };
        while !self.eat("}") {
            if self.at_end() {
                return self.err("unterminated function body");
            }
            let op = self.op(&mut f, &mut names)?;
            f.body.push(op);
        }
        Ok(f)
    }

    fn use_value(&mut self, names: &HashMap<String, ValueId>) -> PResult<ValueId> {
        self.skip_ws();
        let loc = self.loc();
        let n = self.value_name()?;
        match names.get(&n) {
            Some(v) => Ok(*v),
            None => Self::err_at(loc, format!("use of undefined value %{n}")),
        }
    }

    fn value_list(&mut self, names: &HashMap<String, ValueId>) -> PResult<Vec<ValueId>> {
        let mut vs = Vec::new();
        self.skip_ws();
        if self.peek() != Some(b'%') {
            return Ok(vs);
        }
        loop {
            vs.push(self.use_value(names)?);
            if !self.eat(",") {
                break;
            }
        }
        Ok(vs)
    }

    fn type_list(&mut self, close: &str) -> PResult<Vec<TensorType>> {
        let mut ts = Vec::new();
        self.skip_ws();
        if self.src[self.pos..].starts_with(close.as_bytes()) {
            return Ok(ts);
        }
        loop {
            ts.push(self.tensor_type()?);
            if !self.eat(",") {
                break;
            }
        }
        Ok(ts)
    }

    /// Checks an operand type annotation against the values' definitions.
    fn check_annotation(f: &FuncOp, vs: &[ValueId], ts: &[TensorType], loc: SourceLocation) -> PResult<()> {
        if vs.len() != ts.len() {
            return Self::err_at(loc, format!("{} operands but {} annotated types", vs.len(), ts.len()));
        }
        for (v, t) in vs.iter().zip(ts) {
            if f.ty(*v) != t {
                return Self::err_at(loc, format!("operand annotated {t} but has type {}", f.ty(*v)));
            }
        }
        Ok(())
    }

    fn op(&mut self, f: &mut FuncOp, names: &mut HashMap<String, ValueId>) -> PResult<Operation> {
        self.skip_ws();
        let loc = self.loc();
        if self.eat("return") {
            let operands = self.value_list(names)?;
            if self.eat(":") {
                let tloc = self.loc();
                let ts = self.type_list("}")?;
                Self::check_annotation(f, &operands, &ts, tloc)?;
            }
            let mut op = Operation::new(Opcode::Return, operands, vec![]);
            op.loc = Some(loc);
            return Ok(op);
        }
        let result_name = self.value_name()?;
        if names.contains_key(&result_name) {
            return Self::err_at(loc, format!("value %{result_name} defined twice"));
        }
        self.expect("=")?;
        self.skip_ws();
        let op_loc = self.loc();
        let opname = self.ident()?;
        let opcode = match Opcode::from_name(&opname) {
            Some(o) if o != Opcode::Return => o,
            _ => return Self::err_at(op_loc, format!("unknown operation `{opname}`")),
        };

        let mut raw_attrs = Vec::new();
        let operands;
        let mut body = None;
        let result_ty;
        if opcode == Opcode::LinalgGeneric {
            if self.peek_is("{") {
                raw_attrs = self.attr_dict()?;
            }
            self.expect("ins")?;
            self.expect("(")?;
            let ins = self.value_list(names)?;
            if self.eat(":") {
                let tloc = self.loc();
                let ts = self.type_list(")")?;
                Self::check_annotation(f, &ins, &ts, tloc)?;
            } else if !ins.is_empty() {
                return self.err("expected `:` and operand types");
            }
            self.expect(")")?;
            self.expect("outs")?;
            self.expect("(")?;
            let out = self.use_value(names)?;
            self.expect(":")?;
            let tloc = self.loc();
            let ot = self.tensor_type()?;
            Self::check_annotation(f, &[out], &[ot], tloc)?;
            self.expect(")")?;
            if self.peek_is("{") && !self.peek_region() {
                raw_attrs.extend(self.attr_dict()?);
            }
            body = Some(self.region()?);
            self.expect("->")?;
            result_ty = self.tensor_type()?;
            let mut all = ins;
            all.push(out);
            operands = all;
        } else {
            self.expect("(")?;
            operands = self.value_list(names)?;
            self.expect(")")?;
            if self.peek_is("{") {
                raw_attrs = self.attr_dict()?;
            }
            self.expect(":")?;
            self.expect("(")?;
            let tloc = self.loc();
            let ts = self.type_list(")")?;
            self.expect(")")?;
            Self::check_annotation(f, &operands, &ts, tloc)?;
            self.expect("->")?;
            result_ty = self.tensor_type()?;
        }

        let mut attrs = Attrs::new();
        for (key, key_loc, raw) in raw_attrs {
            let value = match raw {
                RawAttr::Ready(a) => a,
                RawAttr::DenseList(items) => Attr::Blob(encode_dense(&items, result_ty.elem)?),
            };
            if attrs.insert(key.clone(), value).is_some() {
                return Self::err_at(key_loc, format!("duplicate attribute `{key}`"));
            }
        }

        let result = ValueId(f.value_types.len() as u32);
        f.value_types.push(result_ty);
        names.insert(result_name, result);
        Ok(Operation { opcode, operands, results: vec![result], attrs, body, loc: Some(loc) })
    }

    fn peek_is(&mut self, tok: &str) -> bool {
        self.skip_ws();
        self.src[self.pos..].starts_with(tok.as_bytes())
    }

    /// After `{`, a region starts with `^`; an attribute dict with a key.
    fn peek_region(&mut self) -> bool {
        let mut i = self.pos + 1;
        while self.src.get(i).is_some_and(|c| c.is_ascii_whitespace()) {
            i += 1;
        }
        self.src.get(i) == Some(&b'^')
    }

    fn attr_dict(&mut self) -> PResult<Vec<(String, SourceLocation, RawAttr)>> {
        self.expect("{")?;
        let mut out = Vec::new();
        if self.eat("}") {
            return Ok(out);
        }
        loop {
            self.skip_ws();
            let loc = self.loc();
            let key = self.ident()?;
            self.expect("=")?;
            let value = self.attr_value(&key)?;
            out.push((key, loc, value));
            if self.eat("}") {
                return Ok(out);
            }
            self.expect(",")?;
        }
    }

    fn attr_value(&mut self, key: &str) -> PResult<RawAttr> {
        self.skip_ws();
        match self.peek() {
            Some(b'[') => {
                self.bump();
                self.skip_ws();
                match self.peek() {
                    Some(b']') => {
                        self.bump();
                        Ok(RawAttr::Ready(match key {
                            "indexing_maps" => Attr::Maps(vec![]),
                            "iterator_types" => Attr::Iterators(vec![]),
                            _ => Attr::Ints(vec![]),
                        }))
                    }
                    Some(b'"') => {
                        let mut its = Vec::new();
                        loop {
                            let loc = {
                                self.skip_ws();
                                self.loc()
                            };
                            let s = self.string_lit()?;
                            match IteratorKind::from_name(&s) {
                                Some(k) => its.push(k),
                                None => return Self::err_at(loc, format!("unknown iterator kind \"{s}\"")),
                            }
                            if self.eat("]") {
                                return Ok(RawAttr::Ready(Attr::Iterators(its)));
                            }
                            self.expect(",")?;
                        }
                    }
                    Some(b'a' | b'#') => {
                        let mut maps = Vec::new();
                        loop {
                            maps.push(self.affine_map()?);
                            if self.eat("]") {
                                return Ok(RawAttr::Ready(Attr::Maps(maps)));
                            }
                            self.expect(",")?;
                        }
                    }
                    _ => {
                        let mut ints = Vec::new();
                        loop {
                            ints.push(self.integer()?);
                            if self.eat("]") {
                                return Ok(RawAttr::Ready(Attr::Ints(ints)));
                            }
                            self.expect(",")?;
                        }
                    }
                }
            }
            Some(b'd') => {
                self.expect("dense")?;
                self.expect("<")?;
                self.skip_ws();
                if self.peek() == Some(b'"') {
                    let loc = self.loc();
                    let s = self.string_lit()?;
                    let bytes = decode_hex(&s).map_or_else(|| Self::err_at(loc, "invalid hex blob"), Ok)?;
                    self.expect(">")?;
                    return Ok(RawAttr::Ready(Attr::Blob(bytes)));
                }
                self.expect("[")?;
                let mut items = Vec::new();
                if !self.eat("]") {
                    loop {
                        self.skip_ws();
                        let loc = self.loc();
                        items.push((self.number_text()?, loc));
                        if self.eat("]") {
                            break;
                        }
                        self.expect(",")?;
                    }
                }
                self.expect(">")?;
                Ok(RawAttr::DenseList(items))
            }
            _ => Ok(RawAttr::Ready(Attr::Int(self.integer()?))),
        }
    }

    fn string_lit(&mut self) -> PResult<String> {
        self.skip_ws();
        if self.peek() != Some(b'"') {
            return self.err("expected a string literal");
        }
        self.bump();
        let start = self.pos;
        loop {
            match self.peek() {
                None | Some(b'\n') => return self.err("unterminated string literal"),
                Some(b'"') => break,
                Some(_) => {
                    self.bump();
                }
            }
        }
        let s = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        self.bump();
        Ok(s)
    }

    fn region(&mut self) -> PResult<ScalarBody> {
        self.expect("{")?;
        self.expect("^")?;
        self.ident()?;
        self.expect("(")?;
        let mut names: HashMap<String, u32> = HashMap::new();
        let mut args = Vec::new();
        if !self.eat(")") {
            loop {
                self.skip_ws();
                let loc = self.loc();
                let n = self.value_name()?;
                self.expect(":")?;
                let t = self.elem_type()?;
                if names.insert(n.clone(), args.len() as u32).is_some() {
                    return Self::err_at(loc, format!("block argument %{n} defined twice"));
                }
                args.push(t);
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        self.expect(":")?;
        let mut ops = Vec::new();
        loop {
            if self.eat("linalg.yield") {
                let mut yields = Vec::new();
                loop {
                    yields.push(self.scalar_use(&names)?);
                    if !self.eat(",") {
                        break;
                    }
                }
                self.expect(":")?;
                for _ in 0..yields.len() {
                    self.elem_type()?;
                    if !self.eat(",") {
                        break;
                    }
                }
                self.expect("}")?;
                return Ok(ScalarBody { args, ops, yields });
            }
            if self.at_end() {
                return self.err("unterminated region");
            }
            self.skip_ws();
            let loc = self.loc();
            let n = self.value_name()?;
            if names.contains_key(&n) {
                return Self::err_at(loc, format!("scalar value %{n} defined twice"));
            }
            self.expect("=")?;
            self.skip_ws();
            let oloc = self.loc();
            let opname = self.ident()?;
            let Some(stem) = opname.strip_prefix("arith.") else {
                return Self::err_at(oloc, format!("unknown scalar operation `{opname}`"));
            };
            let op = if stem == "constant" {
                let cloc = {
                    self.skip_ws();
                    self.loc()
                };
                let lit = self.number_text()?;
                self.expect(":")?;
                let ty = self.elem_type()?;
                let bits = scalar_literal(&lit, ty).map_or_else(|| Self::err_at(cloc, format!("invalid {ty} literal `{lit}`")), Ok)?;
                ScalarOp::Const { ty, bits }
            } else {
                let (base, float) = match stem.strip_suffix('f') {
                    Some(b) => (b, true),
                    None => match stem.strip_suffix('i') {
                        Some(b) => (b, false),
                        None => return Self::err_at(oloc, format!("unknown scalar operation `{opname}`")),
                    },
                };
                let Some(bin) = BinaryOp::from_stem(base) else {
                    return Self::err_at(oloc, format!("unknown scalar operation `{opname}`"));
                };
                let lhs = self.scalar_use(&names)?;
                self.expect(",")?;
                let rhs = self.scalar_use(&names)?;
                self.expect(":")?;
                let tloc = {
                    self.skip_ws();
                    self.loc()
                };
                let ty = self.elem_type()?;
                if ty.is_float() != float {
                    return Self::err_at(tloc, format!("`{opname}` does not operate on {ty}"));
                }
                ScalarOp::Binary { op: bin, ty, lhs, rhs }
            };
            names.insert(n, (args.len() + ops.len()) as u32);
            ops.push(op);
        }
    }

    fn scalar_use(&mut self, names: &HashMap<String, u32>) -> PResult<u32> {
        self.skip_ws();
        let loc = self.loc();
        let n = self.value_name()?;
        match names.get(&n) {
            Some(v) => Ok(*v),
            None => Self::err_at(loc, format!("use of undefined scalar %{n}")),
        }
    }
}

fn decode_hex(s: &str) -> Option<Vec<u8>> {
    let hex = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X"))?;
    if hex.len() % 2 != 0 {
        return None;
    }
    (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(hex.get(i..i + 2)?, 16).ok())
        .collect()
}

/// Element bits of a scalar literal; f32 also accepts `0x` raw bits.
pub(crate) fn scalar_literal(text: &str, ty: ElementType) -> Option<u32> {
    match ty {
        ElementType::F32 => {
            if let Some(hex) = text.strip_prefix("0x") {
                return u32::from_str_radix(hex, 16).ok();
            }
            let lower = text.to_ascii_lowercase();
            if lower.contains("inf") || lower.contains("nan") {
                return None;
            }
            text.parse::<f32>().ok().map(f32::to_bits)
        }
        ElementType::I32 => text.parse::<i32>().ok().map(|v| v as u32),
        ElementType::I8 => text.parse::<i8>().ok().map(|v| v as u8 as u32),
    }
}

fn encode_dense(items: &[(String, SourceLocation)], elem: ElementType) -> PResult<Vec<u8>> {
    let mut out = Vec::new();
    for (text, loc) in items {
        let Some(bits) = scalar_literal(text, elem) else {
            return Parser::err_at(*loc, format!("invalid {elem} literal `{text}`"));
        };
        match elem {
            ElementType::I8 => out.push(bits as u8),
            _ => out.extend_from_slice(&bits.to_le_bytes()),
        }
    }
    Ok(out)
}
