//! Formula text syntax.
//!
//! ```text
//! y ~ x1 + x2 + a:b | fe: athlete event group | iv: position ~ loo
//!   | cluster: event | se: hc1 | filter: groupsize<10, rankcap=250
//! ```
//!
//! Grammar (whitespace and newlines are free, `#` starts a comment):
//!
//! ```text
//! formula  := IDENT '~' terms ( '|' section )*
//! terms    := ( '0' | '1' | term ( '+' term )* )?
//! term     := IDENT ( ':' IDENT )*
//! section  := 'fe' ':' IDENT*
//!           | 'iv' ':' IDENT '~' IDENT ( '+' IDENT )*
//!           | 'cluster' ':' IDENT IDENT?
//!           | 'se' ':' ( 'iid' | 'hc1' )
//!           | 'filter' ':' filter ( ',' filter )*
//! filter   := 'groupsize' ( '<' | '<=' | '>' | '>=' | '=' ) INT
//!           | 'rankcap' '=' NUM | 'poscap' '=' INT | 'period' '=' IDENT
//!           | 'bands' '=' INT '-' INT ':' INT '-' INT
//! ```
//!
//! An empty `cluster:` list and no `se:` section mean iid errors. Two
//! cluster factors mean two-way clustering.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grouping::SizePredicate;
use crate::instruments::{Band, BandPair};
use crate::panel::Period;

use super::OutcomeSpec;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("formula error at line {line}, column {col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

/// Categorical factors available for absorption and clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorName {
    Athlete,
    Event,
    /// Drafting group; keyed per [`GroupKey`](super::GroupKey).
    Group,
    /// Drafting group keyed by `(event, group index)` regardless of options.
    EventGroup,
}

impl FactorName {
    pub fn as_str(self) -> &'static str {
        match self {
            FactorName::Athlete => "athlete",
            FactorName::Event => "event",
            FactorName::Group => "group",
            FactorName::EventGroup => "event_group",
        }
    }
}

impl fmt::Display for FactorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FactorName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "athlete" | "athlete_id" => Ok(FactorName::Athlete),
            "event" | "event_id" => Ok(FactorName::Event),
            "group" | "cluster" => Ok(FactorName::Group),
            "event_group" => Ok(FactorName::EventGroup),
            other => Err(format!(
                "unknown factor `{other}` (expected athlete|event|group|event_group)"
            )),
        }
    }
}

/// Covariance estimator.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CovarianceSpec {
    #[default]
    Iid,
    Hc1,
    Cluster(FactorName),
    TwoWay(FactorName, FactorName),
}

impl CovarianceSpec {
    pub fn cluster_factors(&self) -> Vec<FactorName> {
        match self {
            CovarianceSpec::Iid | CovarianceSpec::Hc1 => vec![],
            CovarianceSpec::Cluster(f) => vec![*f],
            CovarianceSpec::TwoWay(a, b) => vec![*a, *b],
        }
    }
}

impl fmt::Display for CovarianceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovarianceSpec::Iid => write!(f, "iid"),
            CovarianceSpec::Hc1 => write!(f, "hc1"),
            CovarianceSpec::Cluster(a) => write!(f, "cluster:{a}"),
            CovarianceSpec::TwoWay(a, b) => write!(f, "twoway:{a},{b}"),
        }
    }
}

impl FromStr for CovarianceSpec {
    type Err = String;

    /// `iid`, `hc1`, `cluster:event`, `twoway:athlete,event`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "iid" => return Ok(CovarianceSpec::Iid),
            "hc1" => return Ok(CovarianceSpec::Hc1),
            _ => {}
        }
        if let Some(f) = s.strip_prefix("cluster:") {
            return Ok(CovarianceSpec::Cluster(f.trim().parse()?));
        }
        if let Some(fs) = s.strip_prefix("twoway:") {
            let (a, b) = fs
                .split_once(',')
                .ok_or_else(|| format!("twoway needs two factors: `{s}`"))?;
            let (a, b): (FactorName, FactorName) = (a.trim().parse()?, b.trim().parse()?);
            if a == b {
                return Err(format!("twoway factors must differ: `{s}`"));
            }
            return Ok(CovarianceSpec::TwoWay(a, b));
        }
        Err(format!(
            "unknown covariance `{s}` (expected iid|hc1|cluster:F|twoway:F1,F2)"
        ))
    }
}

impl TryFrom<String> for CovarianceSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<CovarianceSpec> for String {
    fn from(c: CovarianceSpec) -> String {
        c.to_string()
    }
}

/// A regressor: a column or a product of columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub parts: Vec<String>,
}

impl Term {
    pub fn column(name: &str) -> Self {
        Term {
            parts: vec![name.to_string()],
        }
    }

    pub fn interaction(a: &str, b: &str) -> Self {
        Term {
            parts: vec![a.to_string(), b.to_string()],
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.parts.join(":"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Filters {
    pub group_size: SizePredicate,
    /// Keep rows with `rank < rank_cap`.
    pub rank_cap: Option<f64>,
    pub position_cap: Option<u32>,
    pub bands: Option<BandPair>,
    pub period: Option<Period>,
}

/// Declarative model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulaSpec {
    /// `y` selects the outcome transform; anything else is a panel column.
    pub lhs: String,
    pub terms: Vec<Term>,
    pub endogenous: Option<String>,
    pub instruments: Vec<String>,
    pub absorb: Vec<FactorName>,
    pub se: CovarianceSpec,
    pub filters: Filters,
    pub outcome: OutcomeSpec,
}

impl FormulaSpec {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Parser::new(text)?.formula()
    }

    pub fn is_iv(&self) -> bool {
        self.endogenous.is_some()
    }

    /// The same model with the endogenous regressor treated as exogenous.
    pub fn as_ols(&self) -> Self {
        let mut f = self.clone();
        if let Some(endog) = f.endogenous.take() {
            f.terms.insert(0, Term::column(&endog));
        }
        f.instruments.clear();
        f
    }

    /// Drop (`false`) or keep the `leader` regressor.
    pub fn with_leader(&self, include: bool) -> Self {
        let mut f = self.clone();
        let has = f.terms.iter().any(|t| t.parts == ["leader"]);
        if include && !has {
            f.terms.push(Term::column("leader"));
        } else if !include {
            f.terms.retain(|t| t.parts != ["leader"]);
        }
        f
    }

    /// Every column name the formula reads, in first-use order.
    pub fn columns(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |s: &str| {
            if !out.iter().any(|o| o == s) {
                out.push(s.to_string());
            }
        };
        push(&self.lhs);
        for t in &self.terms {
            for p in &t.parts {
                push(p);
            }
        }
        if let Some(e) = &self.endogenous {
            push(e);
        }
        for z in &self.instruments {
            push(z);
        }
        out
    }
}

impl fmt::Display for FormulaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~", self.lhs)?;
        let terms: Vec<String> = self.terms.iter().map(Term::to_string).collect();
        if !terms.is_empty() {
            write!(f, " {}", terms.join(" + "))?;
        }
        if !self.absorb.is_empty() {
            let fe: Vec<&str> = self.absorb.iter().map(|a| a.as_str()).collect();
            write!(f, " | fe: {}", fe.join(" "))?;
        }
        if let Some(e) = &self.endogenous {
            write!(f, " | iv: {e} ~ {}", self.instruments.join(" + "))?;
        }
        match &self.se {
            CovarianceSpec::Iid => {}
            CovarianceSpec::Hc1 => write!(f, " | se: hc1")?,
            CovarianceSpec::Cluster(a) => write!(f, " | cluster: {a}")?,
            CovarianceSpec::TwoWay(a, b) => write!(f, " | cluster: {a} {b}")?,
        }
        let mut filters = Vec::new();
        if self.filters.group_size != SizePredicate::Any {
            filters.push(format!("groupsize{}", self.filters.group_size));
        }
        if let Some(c) = self.filters.rank_cap {
            filters.push(format!("rankcap={c}"));
        }
        if let Some(c) = self.filters.position_cap {
            filters.push(format!("poscap={c}"));
        }
        if let Some(b) = self.filters.bands {
            filters.push(format!("bands={b}"));
        }
        if let Some(p) = self.filters.period {
            filters.push(format!("period={}", p.as_str().to_ascii_lowercase()));
        }
        if !filters.is_empty() {
            write!(f, " | filter: {}", filters.join(", "))?;
        }
        Ok(())
    }
}

impl FromStr for FormulaSpec {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FormulaSpec::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Sym(&'static str),
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Num(s) => write!(f, "`{s}`"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::End => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let s: String = chars[i..]
                .iter()
                .take_while(|c| c.is_ascii_alphanumeric() || **c == '_')
                .collect();
            i += s.len();
            col += s.len();
            out.push(Spanned {
                tok: Tok::Ident(s),
                line: l0,
                col: c0,
            });
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let s: String = chars[i..]
                .iter()
                .take_while(|c| c.is_ascii_digit() || **c == '.')
                .collect();
            i += s.len();
            col += s.len();
            out.push(Spanned {
                tok: Tok::Num(s),
                line: l0,
                col: c0,
            });
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let sym: &'static str = match two.as_str() {
            "<=" => "<=",
            ">=" => ">=",
            _ => match c {
                '~' => "~",
                '+' => "+",
                ':' => ":",
                '|' => "|",
                ',' => ",",
                '=' => "=",
                '<' => "<",
                '>' => ">",
                '-' => "-",
                _ => {
                    return Err(ParseError {
                        line,
                        col,
                        message: format!("unexpected character `{c}`"),
                    });
                }
            },
        };
        i += sym.len();
        col += sym.len();
        out.push(Spanned {
            tok: Tok::Sym(sym),
            line: l0,
            col: c0,
        });
    }
    out.push(Spanned {
        tok: Tok::End,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: lex(text)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let t = &self.toks[self.pos];
        Err(ParseError {
            line: t.line,
            col: t.col,
            message: message.into(),
        })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Tok::Sym(s) if *s == sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &str) -> Result<(), ParseError> {
        if self.eat(sym) {
            Ok(())
        } else {
            let found = self.peek().clone();
            self.err(format!("expected `{sym}`, found {found}"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected {what}, found {other}")),
        }
    }

    fn number<T: FromStr>(&mut self, what: &str) -> Result<T, ParseError> {
        match self.peek().clone() {
            Tok::Num(s) => match s.parse() {
                Ok(v) => {
                    self.bump();
                    Ok(v)
                }
                Err(_) => self.err(format!("bad {what} `{s}`")),
            },
            other => self.err(format!("expected {what}, found {other}")),
        }
    }

    fn formula(&mut self) -> Result<FormulaSpec, ParseError> {
        let lhs = self.ident("outcome name")?;
        self.expect("~")?;
        let terms = self.terms()?;
        let mut spec = FormulaSpec {
            lhs,
            terms,
            endogenous: None,
            instruments: vec![],
            absorb: vec![],
            se: CovarianceSpec::Iid,
            filters: Filters::default(),
            outcome: OutcomeSpec::default(),
        };
        let mut se_set = false;
        while self.eat("|") {
            let section = self.ident("section name (fe, iv, cluster, se, filter)")?;
            self.expect(":")?;
            match section.as_str() {
                "fe" => {
                    while let Tok::Ident(name) = self.peek().clone() {
                        let f = name.parse::<FactorName>().or_else(|m| self.err(m))?;
                        if spec.absorb.contains(&f) {
                            return self.err(format!("factor `{f}` absorbed twice"));
                        }
                        spec.absorb.push(f);
                        self.bump();
                    }
                }
                "iv" => {
                    if spec.endogenous.is_some() {
                        return self.err("duplicate iv section");
                    }
                    spec.endogenous = Some(self.ident("endogenous column")?);
                    self.expect("~")?;
                    spec.instruments.push(self.ident("instrument column")?);
                    while self.eat("+") {
                        spec.instruments.push(self.ident("instrument column")?);
                    }
                }
                "cluster" => {
                    if se_set {
                        return self.err("covariance specified twice");
                    }
                    let mut fs = Vec::new();
                    while let Tok::Ident(name) = self.peek().clone() {
                        fs.push(name.parse::<FactorName>().or_else(|m| self.err(m))?);
                        self.bump();
                    }
                    spec.se = match fs.as_slice() {
                        [] => CovarianceSpec::Iid,
                        [a] => CovarianceSpec::Cluster(*a),
                        [a, b] if a != b => CovarianceSpec::TwoWay(*a, *b),
                        _ => return self.err("cluster takes one or two distinct factors"),
                    };
                    se_set = true;
                }
                "se" => {
                    if se_set {
                        return self.err("covariance specified twice");
                    }
                    spec.se = match self.ident("iid or hc1")?.as_str() {
                        "iid" => CovarianceSpec::Iid,
                        "hc1" => CovarianceSpec::Hc1,
                        other => {
                            self.pos -= 1;
                            return self.err(format!("unknown se `{other}` (expected iid|hc1)"));
                        }
                    };
                    se_set = true;
                }
                "filter" => {
                    self.filter(&mut spec.filters)?;
                    while self.eat(",") {
                        self.filter(&mut spec.filters)?;
                    }
                }
                other => {
                    self.pos -= 2;
                    return self.err(format!("unknown section `{other}`"));
                }
            }
        }
        if *self.peek() != Tok::End {
            let found = self.peek().clone();
            return self.err(format!("unexpected {found}"));
        }
        Ok(spec)
    }

    fn terms(&mut self) -> Result<Vec<Term>, ParseError> {
        match self.peek().clone() {
            Tok::Num(n) if n == "0" || n == "1" => {
                self.bump();
                return Ok(vec![]);
            }
            Tok::Ident(_) => {}
            _ => return Ok(vec![]),
        }
        let mut terms = vec![self.term()?];
        while self.eat("+") {
            terms.push(self.term()?);
        }
        Ok(terms)
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let mut parts = vec![self.ident("column name")?];
        while self.eat(":") {
            parts.push(self.ident("column name")?);
        }
        Ok(Term { parts })
    }

    fn filter(&mut self, filters: &mut Filters) -> Result<(), ParseError> {
        let name = self.ident("filter name")?;
        match name.as_str() {
            "groupsize" => {
                let op = match self.bump() {
                    Tok::Sym(s) if ["<", "<=", ">", ">=", "="].contains(&s) => s,
                    _ => {
                        self.pos -= 1;
                        return self.err("expected comparison after groupsize");
                    }
                };
                let n: u32 = self.number("group size")?;
                filters.group_size = format!("{op}{n}").parse().expect("valid predicate");
            }
            "rankcap" => {
                self.expect("=")?;
                filters.rank_cap = Some(self.number("rank cap")?);
            }
            "poscap" => {
                self.expect("=")?;
                filters.position_cap = Some(self.number("position cap")?);
            }
            "period" => {
                self.expect("=")?;
                let p = self.ident("period")?;
                filters.period = Some(p.parse().or_else(|m: String| {
                    self.pos -= 1;
                    self.err(m)
                })?);
            }
            "bands" => {
                self.expect("=")?;
                let low = self.band()?;
                self.expect(":")?;
                let high = self.band()?;
                filters.bands =
                    Some(BandPair::new(low, high).or_else(|e| self.err(e.to_string()))?);
            }
            other => {
                self.pos -= 1;
                return self.err(format!("unknown filter `{other}`"));
            }
        }
        Ok(())
    }

    fn band(&mut self) -> Result<Band, ParseError> {
        let lo: u32 = self.number("band start")?;
        let hi: u32 = if self.eat("-") {
            self.number("band end")?
        } else {
            lo
        };
        Band::new(lo, hi).or_else(|e| self.err(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_example() {
        let f = FormulaSpec::parse(
            "y ~ x1 + x2 + a:b | fe: athlete event group | iv: D ~ Z | cluster: event | filter: groupsize<10, rankcap=250",
        )
        .unwrap();
        assert_eq!(f.lhs, "y");
        assert_eq!(f.terms.len(), 3);
        assert_eq!(f.terms[2].parts, vec!["a", "b"]);
        assert_eq!(
            f.absorb,
            vec![FactorName::Athlete, FactorName::Event, FactorName::Group]
        );
        assert_eq!(f.endogenous.as_deref(), Some("D"));
        assert_eq!(f.instruments, vec!["Z"]);
        assert_eq!(f.se, CovarianceSpec::Cluster(FactorName::Event));
        assert_eq!(f.filters.group_size, SizePredicate::Lt(10));
        assert_eq!(f.filters.rank_cap, Some(250.0));
        assert!(f.is_iv());
        assert_eq!(f.columns(), vec!["y", "x1", "x2", "a", "b", "D", "Z"]);
    }

    #[test]
    fn display_round_trips() {
        let texts = [
            "y ~ leader | fe: athlete event | iv: position ~ loo + projected | cluster: athlete event | filter: groupsize>1, poscap=5, bands=1-2:3-4, period=pre",
            "swim_out_s ~ pre:drafter + post:drafter | fe: athlete event | se: hc1",
            "y ~",
        ];
        for t in texts {
            let f = FormulaSpec::parse(t).unwrap();
            assert_eq!(FormulaSpec::parse(&f.to_string()).unwrap(), f, "{t}");
        }
    }

    #[test]
    fn empty_and_intercept_rhs() {
        let f = FormulaSpec::parse("y ~ 1 | fe: event | iv: position ~ loo").unwrap();
        assert!(f.terms.is_empty());
        let f = FormulaSpec::parse("y ~ | fe: event").unwrap();
        assert!(f.terms.is_empty());
    }

    #[test]
    fn errors_have_positions() {
        let e = FormulaSpec::parse("y ~ x +\n  | fe: event").unwrap_err();
        assert_eq!((e.line, e.col), (2, 3));
        let e = FormulaSpec::parse("y ~ x | fe: galaxy").unwrap_err();
        assert_eq!((e.line, e.col), (1, 13));
        assert!(e.message.contains("galaxy"));
        let e = FormulaSpec::parse("y ~ x | bogus: 1").unwrap_err();
        assert_eq!(e.col, 9);
        let e = FormulaSpec::parse("y ~ x $").unwrap_err();
        assert_eq!(e.col, 7);
        assert!(FormulaSpec::parse("y ~ x | filter: bands=1-3:2-4").is_err());
        assert!(FormulaSpec::parse("y ~ x | cluster: event event").is_err());
        assert!(FormulaSpec::parse("y ~ x | cluster: event | se: hc1").is_err());
    }

    #[test]
    fn ols_view_and_leader_toggle() {
        let f = FormulaSpec::parse("y ~ leader | fe: event | iv: position ~ loo").unwrap();
        let o = f.as_ols();
        assert!(!o.is_iv());
        assert_eq!(o.terms[0], Term::column("position"));
        assert!(f.with_leader(false).terms.is_empty());
        assert_eq!(f.with_leader(true).terms.len(), 1);
    }

    #[test]
    fn covariance_spec_parsing() {
        assert_eq!("hc1".parse::<CovarianceSpec>(), Ok(CovarianceSpec::Hc1));
        assert_eq!(
            "twoway:athlete,event".parse::<CovarianceSpec>(),
            Ok(CovarianceSpec::TwoWay(
                FactorName::Athlete,
                FactorName::Event
            ))
        );
        assert!("twoway:event,event".parse::<CovarianceSpec>().is_err());
        assert!("cluster:planet".parse::<CovarianceSpec>().is_err());
    }
}
