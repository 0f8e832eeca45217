use super::ast::*;
use super::lexer::{tokenize, Spanned, Tok};
use super::ParseError;
use crate::bounds::ScalarAgg;
use crate::expr::CmpOp;

const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "LIMIT", "AS", "AND", "OR", "IN",
    "ASC", "DESC",
];

/// Parses one query; a trailing `;` is allowed.
pub fn parse(src: &str) -> Result<Query, ParseError> {
    let mut p = Parser {
        toks: tokenize(src)?,
        pos: 0,
    };
    let q = p.query()?;
    if p.peek() == &Tok::Semicolon {
        p.pos += 1;
    }
    if p.peek() != &Tok::Eof {
        return Err(p.error(&["end of input"]));
    }
    Ok(q)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError {
            line: t.line,
            col: t.col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            message: format!("unexpected {}", t.tok.describe()),
        }
    }

    fn error_msg(&self, message: String) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError {
            line: t.line,
            col: t.col,
            expected: Vec::new(),
            message,
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        self.peek().is_keyword(kw)
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error(&[kw]))
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if *self.peek() == tok {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&[&tok.describe()]))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Tok::Ident(s) if !is_reserved(s) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error(&[what])),
        }
    }

    fn query(&mut self) -> PResult<Query> {
        self.keyword("SELECT")?;
        let mut select = vec![self.select_item()?];
        while *self.peek() == Tok::Comma {
            self.pos += 1;
            select.push(self.select_item()?);
        }
        if !self.at_keyword("FROM") {
            return Err(self.error(&["`,`", "FROM"]));
        }
        self.pos += 1;
        let from = self.ident("table name")?;
        let where_clause = if self.eat_keyword("WHERE") {
            Some(self.bool_expr()?)
        } else {
            None
        };
        let group_by = if self.eat_keyword("GROUP") {
            self.keyword("BY")?;
            Some(self.ident("column name")?)
        } else {
            None
        };
        let having = if self.eat_keyword("HAVING") {
            Some(self.bool_expr()?)
        } else {
            None
        };
        let order_by = if self.eat_keyword("ORDER") {
            self.keyword("BY")?;
            let expr = self.expr()?;
            let descending = if self.eat_keyword("DESC") {
                true
            } else {
                self.eat_keyword("ASC");
                false
            };
            Some(OrderBy { expr, descending })
        } else {
            None
        };
        let limit = if self.eat_keyword("LIMIT") {
            Some(self.integer("row count")? as u64)
        } else {
            None
        };
        if !matches!(self.peek(), Tok::Eof | Tok::Semicolon) {
            let mut exp = Vec::new();
            if where_clause.is_none() && group_by.is_none() && having.is_none() && order_by.is_none() && limit.is_none() {
                exp.push("WHERE");
            }
            if group_by.is_none() && having.is_none() && order_by.is_none() && limit.is_none() {
                exp.push("GROUP BY");
            }
            if having.is_none() && order_by.is_none() && limit.is_none() {
                exp.push("HAVING");
            }
            if order_by.is_none() && limit.is_none() {
                exp.push("ORDER BY");
            }
            if limit.is_none() {
                exp.push("LIMIT");
            }
            exp.push("end of input");
            return Err(self.error(&exp));
        }
        Ok(Query {
            select,
            from,
            where_clause,
            group_by,
            having,
            order_by,
            limit,
        })
    }

    fn select_item(&mut self) -> PResult<SelectItem> {
        if *self.peek() == Tok::Star {
            self.pos += 1;
            return Ok(SelectItem::Star);
        }
        let expr = self.expr()?;
        let alias = if self.eat_keyword("AS") {
            Some(self.ident("alias")?)
        } else {
            None
        };
        Ok(SelectItem::Expr { expr, alias })
    }

    fn integer(&mut self, what: &str) -> PResult<u32> {
        match *self.peek() {
            Tok::Number(v) if v.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&v) => {
                self.pos += 1;
                Ok(v as u32)
            }
            Tok::Number(v) => Err(self.error_msg(format!("expected a non-negative integer {what}, found {v}"))),
            _ => Err(self.error(&[what])),
        }
    }

    /// Number with an optional leading minus.
    fn signed_number(&mut self) -> PResult<f64> {
        let neg = if *self.peek() == Tok::Minus {
            self.pos += 1;
            true
        } else {
            false
        };
        match *self.peek() {
            Tok::Number(v) => {
                self.pos += 1;
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.error(&["number"])),
        }
    }

    fn bool_expr(&mut self) -> PResult<BoolExpr> {
        let mut left = self.bool_and()?;
        while self.eat_keyword("OR") {
            let right = self.bool_and()?;
            left = BoolExpr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn bool_and(&mut self) -> PResult<BoolExpr> {
        let mut left = self.bool_primary()?;
        while self.eat_keyword("AND") {
            let right = self.bool_primary()?;
            left = BoolExpr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn bool_primary(&mut self) -> PResult<BoolExpr> {
        if *self.peek() == Tok::LParen {
            // `(` opens either a boolean group or an arithmetic operand;
            // try the group first and fall back.
            let start = self.pos;
            let grouped = (|| {
                self.pos += 1;
                let inner = self.bool_expr()?;
                self.expect(Tok::RParen)?;
                if is_operator(self.peek()) {
                    return Err(self.error(&["AND", "OR"]));
                }
                Ok(inner)
            })();
            match grouped {
                Ok(b) => return Ok(b),
                Err(first) => {
                    let first_pos = self.pos;
                    self.pos = start;
                    return self.comparison().map_err(|second| {
                        if (first.line, first.col) > (second.line, second.col) && first_pos > start {
                            first
                        } else {
                            second
                        }
                    });
                }
            }
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<BoolExpr> {
        let left = self.expr()?;
        if self.eat_keyword("IN") {
            self.expect(Tok::LParen)?;
            let mut list = vec![self.signed_number()?];
            while *self.peek() == Tok::Comma {
                self.pos += 1;
                list.push(self.signed_number()?);
            }
            self.expect(Tok::RParen)?;
            return Ok(BoolExpr::In(left, list));
        }
        let op = match self.peek() {
            Tok::Gt => CmpOp::Gt,
            Tok::Lt => CmpOp::Lt,
            Tok::Ge => CmpOp::Ge,
            Tok::Le => CmpOp::Le,
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            _ => return Err(self.error(&["comparison operator", "IN"])),
        };
        self.pos += 1;
        let right = self.expr()?;
        Ok(BoolExpr::Cmp(left, op, right))
    }

    fn expr(&mut self) -> PResult<ScalarExpr> {
        let mut left = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(left),
            };
            self.pos += 1;
            let right = self.term()?;
            left = ScalarExpr::Binary(op, Box::new(left), Box::new(right));
        }
    }

    fn term(&mut self) -> PResult<ScalarExpr> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(left),
            };
            self.pos += 1;
            let right = self.unary()?;
            left = ScalarExpr::Binary(op, Box::new(left), Box::new(right));
        }
    }

    fn unary(&mut self) -> PResult<ScalarExpr> {
        if *self.peek() == Tok::Minus {
            self.pos += 1;
            return Ok(ScalarExpr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<ScalarExpr> {
        match self.peek().clone() {
            Tok::Number(v) => {
                self.pos += 1;
                Ok(ScalarExpr::Number(v))
            }
            Tok::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) if !is_reserved(&name) => {
                if *self.peek_at(1) != Tok::LParen {
                    self.pos += 1;
                    return Ok(ScalarExpr::Ident(name));
                }
                if name.eq_ignore_ascii_case("CP") {
                    return self.cp_call();
                }
                if name.eq_ignore_ascii_case("AREA") {
                    self.pos += 2;
                    let r = self.roi_arg()?;
                    self.expect(Tok::RParen)?;
                    return Ok(ScalarExpr::Area(r));
                }
                if let Some(agg) = ScalarAgg::from_name(&name) {
                    self.pos += 2;
                    let e = self.expr()?;
                    self.expect(Tok::RParen)?;
                    return Ok(ScalarExpr::Agg(agg, Box::new(e)));
                }
                Err(self.error_msg(format!("unknown function `{name}`")))
            }
            _ => Err(self.error(&["expression"])),
        }
    }

    fn cp_call(&mut self) -> PResult<ScalarExpr> {
        self.pos += 2;
        let source = self.mask_arg()?;
        self.expect(Tok::Comma)?;
        let roi = self.roi_arg()?;
        self.expect(Tok::Comma)?;
        self.expect(Tok::LParen)?;
        let lv = self.signed_number()?;
        self.expect(Tok::Comma)?;
        let uv = self.signed_number()?;
        self.expect(Tok::RParen)?;
        self.expect(Tok::RParen)?;
        Ok(ScalarExpr::Cp(CpCall { source, roi, lv, uv }))
    }

    fn mask_arg(&mut self) -> PResult<MaskArg> {
        let name = match self.peek() {
            Tok::Ident(s) => s.clone(),
            _ => return Err(self.error(&["mask", "mask aggregate"])),
        };
        if name.eq_ignore_ascii_case("mask") {
            self.pos += 1;
            return Ok(MaskArg::Mask);
        }
        if *self.peek_at(1) != Tok::LParen || is_reserved(&name) {
            return Err(self.error(&["mask", "mask aggregate"]));
        }
        self.pos += 2;
        if !self.eat_keyword("mask") {
            return Err(self.error(&["mask"]));
        }
        let threshold = if *self.peek() == Tok::Gt {
            self.pos += 1;
            Some(self.signed_number()?)
        } else {
            None
        };
        if *self.peek() != Tok::RParen {
            return Err(self.error(if threshold.is_none() { &["`>`", "`)`"] } else { &["`)`"] }));
        }
        self.pos += 1;
        Ok(MaskArg::Agg {
            name: name.to_ascii_uppercase(),
            threshold,
        })
    }

    fn roi_arg(&mut self) -> PResult<RoiArg> {
        match self.peek() {
            Tok::Ident(_) => Ok(RoiArg::Named(self.ident("roi name")?)),
            Tok::LParen => {
                self.pos += 1;
                let (x1, y1) = self.point()?;
                self.expect(Tok::Comma)?;
                let (x2, y2) = self.point()?;
                self.expect(Tok::RParen)?;
                Ok(RoiArg::Literal { x1, y1, x2, y2 })
            }
            _ => Err(self.error(&["roi name", "roi literal"])),
        }
    }

    fn point(&mut self) -> PResult<(u32, u32)> {
        self.expect(Tok::LParen)?;
        let x = self.integer("coordinate")?;
        self.expect(Tok::Comma)?;
        let y = self.integer("coordinate")?;
        self.expect(Tok::RParen)?;
        Ok((x, y))
    }
}

fn is_reserved(s: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(s))
}

fn is_operator(t: &Tok) -> bool {
    matches!(
        t,
        Tok::Plus | Tok::Minus | Tok::Star | Tok::Slash | Tok::Gt | Tok::Lt | Tok::Ge | Tok::Le | Tok::Eq | Tok::Ne
    ) || t.is_keyword("IN")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_query() {
        let q = parse(
            "SELECT image_id, CP(mask, roi, (0.85, 1.0)) / area(roi) AS r\n\
             FROM MasksDatabaseView\n\
             ORDER BY r ASC LIMIT 25;",
        )
        .unwrap();
        assert_eq!(q.select.len(), 2);
        match &q.select[1] {
            SelectItem::Expr { expr: ScalarExpr::Binary(BinOp::Div, a, b), alias } => {
                assert!(matches!(**a, ScalarExpr::Cp(_)));
                assert_eq!(**b, ScalarExpr::Area(RoiArg::Named("roi".into())));
                assert_eq!(alias.as_deref(), Some("r"));
            }
            other => panic!("{other:?}"),
        }
        let o = q.order_by.unwrap();
        assert!(!o.descending);
        assert_eq!(o.expr, ScalarExpr::Ident("r".into()));
        assert_eq!(q.limit, Some(25));
    }

    #[test]
    fn intersect_query() {
        let q = parse(
            "SELECT image_id, CP(INTERSECT(mask>0.7), roi, (0.7, 1.0)) AS s\n\
             FROM MasksDatabaseView WHERE mask_type IN (1, 2)\n\
             GROUP BY image_id\n\
             ORDER BY s DESC LIMIT 10;",
        )
        .unwrap();
        match &q.select[1] {
            SelectItem::Expr { expr: ScalarExpr::Cp(c), .. } => {
                assert_eq!(c.source, MaskArg::Agg { name: "INTERSECT".into(), threshold: Some(0.7) });
                assert_eq!((c.lv, c.uv), (0.7, 1.0));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            q.where_clause,
            Some(BoolExpr::In(ScalarExpr::Ident("mask_type".into()), vec![1.0, 2.0]))
        );
        assert_eq!(q.group_by.as_deref(), Some("image_id"));
        assert!(q.order_by.unwrap().descending);
        assert_eq!(q.limit, Some(10));
    }

    #[test]
    fn empty_select_list_fails_at_from() {
        let e = parse("SELECT FROM").unwrap_err();
        assert_eq!((e.line, e.col), (1, 8));
    }

    #[test]
    fn parenthesized_conditions() {
        let q = parse("select * from masks where (cp(mask, full, (0.5, 1)) + 1) > 3 and (model_id = 1 or model_id = 2)").unwrap();
        match q.where_clause.unwrap() {
            BoolExpr::And(a, b) => {
                assert!(matches!(*a, BoolExpr::Cmp(ScalarExpr::Binary(BinOp::Add, _, _), CmpOp::Gt, _)));
                assert!(matches!(*b, BoolExpr::Or(_, _)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn roi_literal() {
        let q = parse("SELECT mask_id FROM masks WHERE CP(mask, ((50, 50), (200, 200)), (0.6, 1.0)) > 5000").unwrap();
        match q.where_clause.unwrap() {
            BoolExpr::Cmp(ScalarExpr::Cp(c), CmpOp::Gt, ScalarExpr::Number(t)) => {
                assert_eq!(c.roi, RoiArg::Literal { x1: 50, y1: 50, x2: 200, y2: 200 });
                assert_eq!(t, 5000.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_positions() {
        let cases = [
            ("SELECT mask_id FROM masks WHERE", (1, 32)),
            ("SELECT mask_id\nFROM masks\nWHERE CP(mask, full, (0.5 1)) > 3", (3, 27)),
            ("SELECT mask_id FROM masks LIMIT 2.5", (1, 33)),
            ("SELECT mask_id FROM masks ORDER mask_id", (1, 33)),
            ("SELECT foo(1) FROM masks", (1, 8)),
            ("SELECT mask_id FROM masks WHERE mask_id > 1 extra", (1, 45)),
        ];
        for (src, at) in cases {
            let e = parse(src).unwrap_err();
            assert_eq!((e.line, e.col), at, "{src}: {e}");
        }
    }

    #[test]
    fn keywords_are_case_insensitive() {
        let a = parse("select mask_id from masks where model_id = 1 order by mask_id desc limit 3").unwrap();
        let b = parse("SELECT mask_id FROM masks WHERE model_id = 1 ORDER BY mask_id DESC LIMIT 3").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn display_reparses() {
        let src = "SELECT *, CP(UNION(mask), object, (0.1, 0.9)) - -2 * MAX(CP(mask, full, (0, 1))) AS v \
                   FROM masks WHERE (model_id IN (1, -2) OR mask_id >= 3) AND area(((1, 1), (4, 4))) > 2 \
                   GROUP BY image_id HAVING v != 1 ORDER BY v DESC LIMIT 7";
        let q = parse(src).unwrap();
        assert_eq!(parse(&q.to_string()).unwrap(), q);
    }
}
