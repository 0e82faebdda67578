use std::collections::BTreeMap;

/// Stage of the counting chain an elementary deviation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    /// Detection, `C_i^j - q^j B_i^j` (dark counts at `j = -1`).
    C,
    /// Basis sifting, `E_i^j - C_i^j / 2`.
    E,
    /// Key/check split of the signal kinds.
    F,
    /// Transmission errors among check bits, `G_i^j - r^j F_i^j`.
    G,
    /// Residual of the detected bit errors `H_i`.
    H,
    /// Emission, `A_i P_i^j - B_i^j`.
    B,
}

/// One primed deviation, identified by family, pulse kind `i` and emitted state `j`.
///
/// `j` runs over `-1..=2k+1`; it is fixed at 0 for the `H` family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BaseVariable {
    pub family: Family,
    pub i: usize,
    pub j: i32,
}

impl BaseVariable {
    pub fn dc(i: usize, j: i32) -> Self {
        BaseVariable { family: Family::C, i, j }
    }
    pub fn de(i: usize, j: i32) -> Self {
        BaseVariable { family: Family::E, i, j }
    }
    pub fn df(i: usize, j: i32) -> Self {
        BaseVariable { family: Family::F, i, j }
    }
    pub fn dg(i: usize, j: i32) -> Self {
        BaseVariable { family: Family::G, i, j }
    }
    pub fn dh(i: usize) -> Self {
        BaseVariable { family: Family::H, i, j: 0 }
    }
    pub fn db(i: usize, j: i32) -> Self {
        BaseVariable { family: Family::B, i, j }
    }
}

/// `constant + sum_u c_u u` over elementary deviations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    terms: BTreeMap<BaseVariable, f64>,
    pub constant: f64,
}

impl LinearForm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(v: BaseVariable) -> Self {
        let mut f = Self::new();
        f.add_term(v, 1.0);
        f
    }

    pub fn add_term(&mut self, v: BaseVariable, c: f64) {
        if c != 0.0 {
            *self.terms.entry(v).or_insert(0.0) += c;
        }
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &LinearForm) {
        if c == 0.0 {
            return;
        }
        for (&v, &w) in &other.terms {
            self.add_term(v, c * w);
        }
        self.constant += c * other.constant;
    }

    pub fn scaled(&self, c: f64) -> LinearForm {
        let mut out = LinearForm::new();
        out.axpy(c, self);
        out
    }

    pub fn coefficient(&self, v: &BaseVariable) -> f64 {
        self.terms.get(v).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&BaseVariable, &f64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Drops terms whose coefficient cancelled to exactly zero.
    pub fn prune(&mut self) {
        self.terms.retain(|_, c| *c != 0.0);
    }

    /// Value of the form when every deviation takes the value `values(u)`.
    pub fn evaluate(&self, values: impl Fn(&BaseVariable) -> f64) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * values(v)).sum::<f64>()
    }
}
