//! System description and model-file I/O.
//!
//! A model is the tuple `(E, {A(i)}, {C(i)}, transition, kind)`. For
//! continuous models `transition` is the generator `Pi` (rows sum to 0);
//! for discrete models it is the stochastic matrix `Lambda` (rows sum to 1).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, PencilDegree};

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Continuous,
    Discrete,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Continuous => "continuous",
            Kind::Discrete => "discrete",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: Kind,
    pub e: Matrix,
    pub a: Vec<Matrix>,
    pub c: Vec<Matrix>,
    pub transition: Matrix,
    /// Optional initial state for simulation, in original coordinates.
    pub x0: Option<Vec<f64>>,
    /// Optional initial mode for simulation (0-based).
    pub r0: Option<usize>,
}

/// On-disk layout. Matrices are arrays of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    kind: String,
    n: usize,
    #[serde(rename = "N")]
    modes: usize,
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    g: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "C")]
    c: Vec<Vec<Vec<f64>>>,
    transition: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0: Option<Vec<f64>>,
    /// 1-based mode label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r0: Option<usize>,
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Parse(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{what}: ragged or empty rows")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Parse(format!("{what}: non-finite entry")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(nrows, ncols, &flat))
}

pub(crate) fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn expect_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn matrix_list(
    raw: &[Vec<Vec<f64>>],
    count: usize,
    n: usize,
    name: &str,
) -> Result<Vec<Matrix>> {
    if raw.len() != count {
        return Err(Error::Dimension(format!(
            "{name} has {} matrices, expected N = {count}",
            raw.len()
        )));
    }
    raw.iter()
        .enumerate()
        .map(|(i, rows)| {
            let label = format!("{name}({})", i + 1);
            let m = matrix_from_rows(rows, &label)?;
            expect_shape(&m, n, n, &label)?;
            Ok(m)
        })
        .collect()
}

impl Model {
    pub fn new(kind: Kind, e: Matrix, a: Vec<Matrix>, c: Vec<Matrix>, transition: Matrix) -> Result<Self> {
        let model = Model {
            kind,
            e,
            a,
            c,
            transition,
            x0: None,
            r0: None,
        };
        model.check_dimensions()?;
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn modes(&self) -> usize {
        self.a.len()
    }

    fn check_dimensions(&self) -> Result<()> {
        let n = self.e.nrows();
        if n == 0 {
            return Err(Error::Dimension("E must be at least 1x1".into()));
        }
        expect_shape(&self.e, n, n, "E")?;
        let modes = self.a.len();
        if modes == 0 {
            return Err(Error::Dimension("at least one mode is required".into()));
        }
        if self.c.len() != modes {
            return Err(Error::Dimension(format!(
                "{} drift matrices but {} noise matrices",
                modes,
                self.c.len()
            )));
        }
        for (i, (a, c)) in self.a.iter().zip(&self.c).enumerate() {
            expect_shape(a, n, n, &format!("A({})", i + 1))?;
            expect_shape(c, n, n, &format!("C({})", i + 1))?;
        }
        expect_shape(&self.transition, modes, modes, "transition")?;
        let all_finite = std::iter::once(&self.e)
            .chain(&self.a)
            .chain(&self.c)
            .chain(std::iter::once(&self.transition))
            .all(|m| m.iter().all(|x| x.is_finite()));
        if !all_finite {
            return Err(Error::InvalidModel("non-finite matrix entry".into()));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n {
                return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
            }
        }
        if let Some(r0) = self.r0 {
            if r0 >= modes {
                return Err(Error::Dimension(format!("r0 = {} exceeds N = {modes}", r0 + 1)));
            }
        }
        Ok(())
    }

    /// Parses the JSON model format.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let kind = match file.kind.as_str() {
            "continuous" => Kind::Continuous,
            "discrete" => Kind::Discrete,
            other => return Err(Error::Parse(format!("unknown kind '{other}'"))),
        };
        let n = file.n;
        let e = matrix_from_rows(&file.e, "E")?;
        expect_shape(&e, n, n, "E")?;
        let a = match (&file.a, &file.g) {
            (Some(a), None) => matrix_list(a, file.modes, n, "A")?,
            (None, Some(g)) => {
                if kind != Kind::Discrete {
                    return Err(Error::Parse("\"G\" (Leontief form) is only valid for discrete models".into()));
                }
                // A(i) = I - G(i) + E
                matrix_list(g, file.modes, n, "G")?
                    .into_iter()
                    .map(|g| Matrix::identity(n, n) - g + &e)
                    .collect()
            }
            (Some(_), Some(_)) => return Err(Error::Parse("\"A\" and \"G\" are mutually exclusive".into())),
            (None, None) => return Err(Error::Parse("one of \"A\" or \"G\" is required".into())),
        };
        let c = matrix_list(&file.c, file.modes, n, "C")?;
        let transition = matrix_from_rows(&file.transition, "transition")?;
        expect_shape(&transition, file.modes, file.modes, "transition")?;
        let r0 = match file.r0 {
            Some(0) => return Err(Error::Parse("r0 is 1-based".into())),
            Some(r) => Some(r - 1),
            None => None,
        };
        let model = Model {
            kind,
            e,
            a,
            c,
            transition,
            x0: file.x0,
            r0,
        };
        model.check_dimensions()?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            kind: self.kind.as_str().to_string(),
            n: self.n(),
            modes: self.modes(),
            e: matrix_to_rows(&self.e),
            a: Some(self.a.iter().map(matrix_to_rows).collect()),
            g: None,
            c: self.c.iter().map(matrix_to_rows).collect(),
            transition: matrix_to_rows(&self.transition),
            x0: self.x0.clone(),
            r0: self.r0.map(|r| r + 1),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn ensure_kind(&self, expected: Kind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::KindMismatch {
                expected: expected.as_str(),
                found: self.kind.as_str(),
            });
        }
        Ok(())
    }

    pub fn rank_e(&self) -> Result<usize> {
        linalg::rank(&self.e, None)
    }

    /// Non-fatal structural checks; never mutates the model.
    pub fn validate(&self) -> Result<ValidationReport> {
        let r = self.rank_e()?;
        let n = self.n();
        let mut notes = Vec::new();
        let mut range_condition = Vec::with_capacity(self.modes());
        let mut regular = Vec::with_capacity(self.modes());
        for (i, (a, c)) in self.a.iter().zip(&self.c).enumerate() {
            let mut aug = Matrix::zeros(n, 2 * n);
            aug.columns_mut(0, n).copy_from(&self.e);
            aug.columns_mut(n, n).copy_from(c);
            let ok = linalg::rank(&aug, None)? == r;
            if !ok {
                notes.push(format!("mode {}: rank [E C] exceeds rank E = {r}", i + 1));
            }
            range_condition.push(ok);
            let reg = linalg::pencil_degree(&self.e, a)? != PencilDegree::NonRegular;
            if !reg {
                notes.push(format!("mode {}: pencil (E, A) is not regular", i + 1));
            }
            regular.push(reg);
        }
        let transition_ok = self.check_transition(&mut notes);
        Ok(ValidationReport {
            rank_e: r,
            range_condition,
            regular,
            transition_ok,
            notes,
        })
    }

    fn check_transition(&self, notes: &mut Vec<String>) -> bool {
        let t = &self.transition;
        let modes = t.nrows();
        let mut ok = true;
        for i in 0..modes {
            let row_sum: f64 = t.row(i).iter().sum();
            for j in 0..modes {
                let v = t[(i, j)];
                let bad = match self.kind {
                    Kind::Continuous => i != j && v < 0.0,
                    Kind::Discrete => v < 0.0,
                };
                if bad {
                    ok = false;
                    notes.push(format!("transition[{}][{}] = {v} is negative", i + 1, j + 1));
                }
            }
            let target = match self.kind {
                Kind::Continuous => 0.0,
                Kind::Discrete => 1.0,
            };
            if (row_sum - target).abs() > ROW_SUM_TOL {
                ok = false;
                notes.push(format!(
                    "transition row {} sums to {row_sum}, expected {target}",
                    i + 1
                ));
            }
        }
        ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub rank_e: usize,
    /// Per mode: `rank [E C(i)] == rank E`.
    pub range_condition: Vec<bool>,
    /// Per mode: `det(sE - A(i))` not identically zero.
    pub regular: Vec<bool>,
    pub transition_ok: bool,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn range_condition_holds(&self) -> bool {
        self.range_condition.iter().all(|&b| b)
    }

    pub fn all_ok(&self) -> bool {
        self.range_condition_holds() && self.regular.iter().all(|&b| b) && self.transition_ok
    }
}
