//! Sz-block representation of models and banded density matrices.
//!
//! Every operator in the atom-cavity problem commutes with Sz, so the density
//! matrix splits into blocks ρ_(i,j) (one per pair of Sz eigenvalues) that
//! evolve independently under both the master equation and the homodyne SME.
//! Storing only |i - j| ≤ band is therefore exact for the retained blocks;
//! band 2 is enough for all first and second spin moments.


use crate::hilbert::{hermitian_min_eigenvalue, raising_elements, SpaceTag};
use crate::models::LindbladModel;
use crate::{CMatrix, Error, Result, C64};

/// Sparse square block stored as (row, col, value) triplets.
#[derive(Clone, Debug, Default)]
pub struct SparseBlock {
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseBlock {
    pub fn from_dense(a: &CMatrix) -> Self {
        let mut entries = Vec::new();
        for c in 0..a.ncols() {
            for r in 0..a.nrows() {
                let v = a[(r, c)];
                if v != C64::from(0.0) {
                    entries.push((r, c, v));
                }
            }
        }
        Self { entries }
    }

    /// Value at (0, 0), for 1×1 blocks.
    fn scalar(&self) -> C64 {
        self.entries
            .iter()
            .filter(|e| e.0 == 0 && e.1 == 0)
            .map(|e| e.2)
            .sum()
    }

    /// Tr(A X) for a dense m×m block X.
    fn trace_with(&self, x: &[C64], m: usize) -> C64 {
        self.entries.iter().map(|&(r, k, v)| v * x[k + r * m]).sum()
    }
}

/// out += A X
fn left_mul_add(a: &SparseBlock, x: &[C64], out: &mut [C64], m: usize) {
    for &(r, k, v) in &a.entries {
        for c in 0..m {
            out[r + c * m] += v * x[k + c * m];
        }
    }
}

/// out += X B†
fn right_mul_adj_add(x: &[C64], b: &SparseBlock, out: &mut [C64], m: usize) {
    for &(c, k, v) in &b.entries {
        let v = v.conj();
        let (src, dst) = (k * m, c * m);
        for r in 0..m {
            out[dst + r] += x[src + r] * v;
        }
    }
}

/// Extracts the diagonal Sz blocks of `a`, or `None` if `a` couples
/// different Sz sectors.
fn split_blocks(a: &CMatrix, n_spin: usize, m: usize) -> Option<Vec<CMatrix>> {
    for c in 0..a.ncols() {
        for r in 0..a.nrows() {
            if r / m != c / m && a[(r, c)] != C64::from(0.0) {
                return None;
            }
        }
    }
    Some((0..n_spin).map(|i| a.view((i * m, i * m), (m, m)).into_owned()).collect())
}

/// Lindblad model split into Sz blocks.
#[derive(Clone, Debug)]
pub struct BlockModel {
    pub n_spin: usize,
    pub m: usize,
    pub space: SpaceTag,
    /// G_i = -iH_i - ½ Σ L_i†L_i
    drift: Vec<SparseBlock>,
    /// jumps[l][i]
    jumps: Vec<Vec<SparseBlock>>,
    /// monitored jump times e^{-iφ}, per block
    measured: Option<Vec<SparseBlock>>,
    pub eta: f64,
    /// scalar blocks: drift, jumps, measured values per Sz index
    scalar: Option<ScalarBlocks>,
}

#[derive(Clone, Debug)]
struct ScalarBlocks {
    drift: Vec<C64>,
    jumps: Vec<Vec<C64>>,
    measured: Option<Vec<C64>>,
}

impl BlockModel {
    /// Splits `model` along Sz. A model whose operators mix Sz sectors is kept
    /// as a single dense block.
    pub fn from_model(model: &LindbladModel) -> Result<Self> {
        model.validate()?;
        let space = model.space;
        let (mut n_spin, mut m) = (space.spin_dim(), space.cavity_dim());
        let mut ops = vec![&model.hamiltonian];
        ops.extend(model.jumps.iter());
        if ops.iter().any(|a| split_blocks(a, n_spin, m).is_none()) {
            n_spin = 1;
            m = space.dim();
        }
        let split = |a: &CMatrix| split_blocks(a, n_spin, m).expect("checked block structure");
        let h_blocks = split(&model.hamiltonian);
        let jump_blocks: Vec<Vec<CMatrix>> = model.jumps.iter().map(|l| split(l)).collect();

        let mut drift = Vec::with_capacity(n_spin);
        for i in 0..n_spin {
            let mut g = &h_blocks[i] * C64::new(0.0, -1.0);
            for l in &jump_blocks {
                g -= l[i].adjoint() * &l[i] * C64::from(0.5);
            }
            drift.push(SparseBlock::from_dense(&g));
        }
        let measured_dense = model.measured_operator().map(|(op, _)| split(&op));
        let eta = model.monitored.map_or(0.0, |c| c.eta);
        let jumps: Vec<Vec<SparseBlock>> = jump_blocks
            .iter()
            .map(|l| l.iter().map(SparseBlock::from_dense).collect())
            .collect();
        let measured: Option<Vec<SparseBlock>> =
            measured_dense.map(|v| v.iter().map(SparseBlock::from_dense).collect());
        let scalar = (m == 1).then(|| ScalarBlocks {
            drift: drift.iter().map(SparseBlock::scalar).collect(),
            jumps: jumps.iter().map(|l| l.iter().map(SparseBlock::scalar).collect()).collect(),
            measured: measured.as_ref().map(|v| v.iter().map(SparseBlock::scalar).collect()),
        });
        Ok(Self { n_spin, m, space, drift, jumps, measured, eta, scalar })
    }

    /// Whether the model kept its Sz-block structure.
    pub fn is_spin_blocked(&self) -> bool {
        self.n_spin == self.space.spin_dim()
    }

    pub fn is_monitored(&self) -> bool {
        self.measured.is_some()
    }

    /// All operators are diagonal numbers (reduced spin models).
    pub fn is_scalar(&self) -> bool {
        self.scalar.is_some()
    }

    /// Diagonal values of H and of the monitored jump (with e^{-iφ}) for
    /// scalar-block models.
    pub fn scalar_spectrum(&self) -> Option<ScalarSpectrum> {
        let s = self.scalar.as_ref()?;
        let mut h = Vec::with_capacity(self.n_spin);
        for i in 0..self.n_spin {
            // G = -iH - ½Σ|l|²
            let loss: f64 = s.jumps.iter().map(|l| l[i].norm_sqr()).sum();
            let g = s.drift[i];
            debug_assert!((g.re + 0.5 * loss).abs() <= 1e-12 * (1.0 + loss));
            h.push(-g.im);
        }
        Some(ScalarSpectrum {
            hamiltonian: h,
            jumps: s.jumps.clone(),
            measured: s.measured.clone(),
            eta: self.eta,
        })
    }

    pub fn zero_state(&self, band: usize) -> BandedState {
        BandedState::zeros(self.n_spin, self.m, band)
    }

    /// out = ℒ(x), blockwise.
    pub fn lindblad(&self, x: &BandedState, out: &mut BandedState) {
        debug_assert_eq!(x.layout(), out.layout());
        if let Some(s) = &self.scalar {
            for off in 0..=x.band {
                for i in 0..x.n_spin - off {
                    let j = i + off;
                    let mut rate = s.drift[i] + s.drift[j].conj();
                    for l in &s.jumps {
                        rate += l[i] * l[j].conj();
                    }
                    let k = x.index(i, off);
                    out.data[k] = rate * x.data[k];
                }
            }
            return;
        }
        let m = self.m;
        let mut tmp = vec![C64::from(0.0); m * m];
        for off in 0..=x.band {
            for i in 0..x.n_spin - off {
                let j = i + off;
                let xb = x.block(i, off);
                let ob = out.block_mut(i, off);
                ob.fill(C64::from(0.0));
                left_mul_add(&self.drift[i], xb, ob, m);
                right_mul_adj_add(xb, &self.drift[j], ob, m);
                for l in &self.jumps {
                    tmp.fill(C64::from(0.0));
                    left_mul_add(&l[i], xb, &mut tmp, m);
                    right_mul_adj_add(&tmp, &l[j], ob, m);
                }
            }
        }
    }

    /// ⟨L' + L'†⟩ for the monitored channel (L' includes e^{-iφ}).
    pub fn measured_mean(&self, x: &BandedState) -> f64 {
        let Some(meas) = &self.measured else { return 0.0 };
        let m = self.m;
        let mut acc = C64::from(0.0);
        for i in 0..x.n_spin {
            acc += meas[i].trace_with(x.block(i, 0), m);
        }
        2.0 * acc.re
    }

    /// out = ℋ[L'](x) = L'x + xL'† - ⟨L' + L'†⟩x; returns ⟨L' + L'†⟩.
    pub fn backaction(&self, x: &BandedState, out: &mut BandedState) -> f64 {
        let Some(meas) = &self.measured else {
            out.data.fill(C64::from(0.0));
            return 0.0;
        };
        let mean = self.measured_mean(x);
        if let Some(s) = &self.scalar {
            let lm = s.measured.as_ref().expect("measured scalars");
            for off in 0..=x.band {
                for i in 0..x.n_spin - off {
                    let j = i + off;
                    let k = x.index(i, off);
                    out.data[k] = (lm[i] + lm[j].conj() - mean) * x.data[k];
                }
            }
            return mean;
        }
        let m = self.m;
        for off in 0..=x.band {
            for i in 0..x.n_spin - off {
                let j = i + off;
                let xb = x.block(i, off);
                let ob = out.block_mut(i, off);
                for (o, v) in ob.iter_mut().zip(xb) {
                    *o = -*v * mean;
                }
                left_mul_add(&meas[i], xb, ob, m);
                right_mul_adj_add(xb, &meas[j], ob, m);
            }
        }
        mean
    }
}

/// Diagonal data of a scalar-block model.
#[derive(Clone, Debug)]
pub struct ScalarSpectrum {
    pub hamiltonian: Vec<f64>,
    pub jumps: Vec<Vec<C64>>,
    pub measured: Option<Vec<C64>>,
    pub eta: f64,
}

/// Upper band of Sz blocks of a density matrix; block (i, i + off) is stored
/// for off ≤ band, the lower blocks follow from Hermiticity.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedState {
    pub n_spin: usize,
    pub m: usize,
    pub band: usize,
    pub data: Vec<C64>,
}

impl BandedState {
    pub fn zeros(n_spin: usize, m: usize, band: usize) -> Self {
        let band = band.min(n_spin.saturating_sub(1));
        let blocks: usize = (0..=band).map(|o| n_spin - o).sum();
        Self { n_spin, m, band, data: vec![C64::from(0.0); blocks * m * m] }
    }

    pub fn layout(&self) -> (usize, usize, usize) {
        (self.n_spin, self.m, self.band)
    }

    pub fn is_full(&self) -> bool {
        self.band + 1 >= self.n_spin
    }

    /// Block number of (i, i + off).
    fn block_number(&self, i: usize, off: usize) -> usize {
        off * self.n_spin - off * off.saturating_sub(1) / 2 + i
    }

    /// Index of element (0, 0) of block (i, i + off).
    pub fn index(&self, i: usize, off: usize) -> usize {
        self.block_number(i, off) * self.m * self.m
    }

    pub fn block(&self, i: usize, off: usize) -> &[C64] {
        let k = self.index(i, off);
        &self.data[k..k + self.m * self.m]
    }

    pub fn block_mut(&mut self, i: usize, off: usize) -> &mut [C64] {
        let k = self.index(i, off);
        let mm = self.m * self.m;
        &mut self.data[k..k + mm]
    }

    /// Bands a dense density matrix whose basis is ordered (spin, block).
    pub fn from_dense(rho: &CMatrix, n_spin: usize, m: usize, band: usize) -> Result<Self> {
        if rho.shape() != (n_spin * m, n_spin * m) {
            return Err(Error::Shape(format!(
                "state is {:?}, expected {}x{}",
                rho.shape(),
                n_spin * m,
                n_spin * m
            )));
        }
        let mut out = Self::zeros(n_spin, m, band);
        for off in 0..=out.band {
            for i in 0..n_spin - off {
                let j = i + off;
                let view = rho.view((i * m, j * m), (m, m));
                out.block_mut(i, off).copy_from_slice(view.clone_owned().as_slice());
            }
        }
        Ok(out)
    }

    /// Dense matrix; blocks outside the band are zero.
    pub fn to_dense(&self) -> CMatrix {
        let (n, m) = (self.n_spin, self.m);
        let mut rho = CMatrix::zeros(n * m, n * m);
        for off in 0..=self.band {
            for i in 0..n - off {
                let j = i + off;
                let b = CMatrix::from_column_slice(m, m, self.block(i, off));
                if off > 0 {
                    rho.view_mut((j * m, i * m), (m, m)).copy_from(&b.adjoint());
                }
                rho.view_mut((i * m, j * m), (m, m)).copy_from(&b);
            }
        }
        rho
    }

    pub fn trace(&self) -> C64 {
        let m = self.m;
        (0..self.n_spin)
            .map(|i| {
                let b = self.block(i, 0);
                (0..m).map(|r| b[r + r * m]).sum::<C64>()
            })
            .sum()
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    /// Divides by the trace (real part).
    pub fn normalize(&mut self) {
        let tr = self.trace().re;
        self.scale(1.0 / tr);
    }

    /// Largest |X - X†| entry over the diagonal blocks.
    pub fn hermiticity_error(&self) -> f64 {
        let m = self.m;
        let mut err: f64 = 0.0;
        for i in 0..self.n_spin {
            let b = self.block(i, 0);
            for c in 0..m {
                for r in 0..=c {
                    err = err.max((b[r + c * m] - b[c + r * m].conj()).norm());
                }
            }
        }
        err
    }

    /// Replaces diagonal blocks by their Hermitian part.
    pub fn hermitize(&mut self) {
        let m = self.m;
        for i in 0..self.n_spin {
            let b = self.block_mut(i, 0);
            for c in 0..m {
                for r in 0..=c {
                    let avg = (b[r + c * m] + b[c + r * m].conj()) * 0.5;
                    b[r + c * m] = avg;
                    b[c + r * m] = avg.conj();
                }
            }
        }
    }

    /// Smallest real diagonal entry of the full matrix (a cheap positivity probe).
    pub fn min_diagonal(&self) -> f64 {
        let m = self.m;
        let mut out = f64::INFINITY;
        for i in 0..self.n_spin {
            let b = self.block(i, 0);
            for r in 0..m {
                out = out.min(b[r + r * m].re);
            }
        }
        out
    }

    /// Smallest eigenvalue: of the whole matrix when the band is full, else
    /// the smallest eigenvalue over the diagonal blocks.
    pub fn min_eigenvalue(&self) -> f64 {
        if self.is_full() {
            return hermitian_min_eigenvalue(&self.to_dense());
        }
        (0..self.n_spin)
            .map(|i| hermitian_min_eigenvalue(&CMatrix::from_column_slice(self.m, self.m, self.block(i, 0))))
            .fold(f64::INFINITY, f64::min)
    }

    /// Σ_i Tr(op ρ_(i,i)) for an operator acting within each block.
    pub fn block_expectation(&self, op: &CMatrix) -> C64 {
        let sp = SparseBlock::from_dense(op);
        (0..self.n_spin).map(|i| sp.trace_with(self.block(i, 0), self.m)).sum()
    }

    /// Spin-reduced band: traces of the blocks (i, i), (i, i+1), (i, i+2).
    pub fn spin_band(&self) -> Result<SpinBand> {
        if self.band < 2.min(self.n_spin - 1) {
            return Err(Error::Shape(format!("band {} too narrow for spin moments", self.band)));
        }
        let m = self.m;
        let tr = |i: usize, off: usize| {
            let b = self.block(i, off);
            (0..m).map(|r| b[r + r * m]).sum::<C64>()
        };
        let n = self.n_spin;
        Ok(SpinBand {
            diag: (0..n).map(|i| tr(i, 0).re).collect(),
            off1: if n > 1 { (0..n - 1).map(|i| tr(i, 1)).collect() } else { vec![] },
            off2: if n > 2 { (0..n - 2).map(|i| tr(i, 2)).collect() } else { vec![] },
        })
    }

    /// Spin-reduced dense state (requires a full band).
    pub fn spin_dense(&self) -> Result<CMatrix> {
        if !self.is_full() {
            return Err(Error::Shape("spin_dense needs a full band".into()));
        }
        let n = self.n_spin;
        let m = self.m;
        let mut out = CMatrix::zeros(n, n);
        for off in 0..n {
            for i in 0..n - off {
                let b = self.block(i, off);
                let t: C64 = (0..m).map(|r| b[r + r * m]).sum();
                out[(i, i + off)] = t;
                out[(i + off, i)] = t.conj();
            }
        }
        Ok(out)
    }
}

/// Reduced spin density matrix restricted to |i - j| ≤ 2 (upper part).
#[derive(Clone, Debug, PartialEq)]
pub struct SpinBand {
    pub diag: Vec<f64>,
    pub off1: Vec<C64>,
    pub off2: Vec<C64>,
}

impl SpinBand {
    pub fn n_atoms(&self) -> usize {
        self.diag.len() - 1
    }

    pub fn from_dense(rho: &CMatrix) -> Self {
        let n = rho.nrows();
        SpinBand {
            diag: (0..n).map(|i| rho[(i, i)].re).collect(),
            off1: (1..n).map(|i| rho[(i - 1, i)]).collect(),
            off2: (2..n).map(|i| rho[(i - 2, i)]).collect(),
        }
    }

    /// Mean Sz and the S+ expectations needed for first and second moments:
    /// (⟨Sz⟩, ⟨Sz²⟩, ⟨S+⟩, ⟨S+²⟩, ⟨{S+, Sz}⟩).
    pub fn ladder_moments(&self) -> (f64, f64, C64, C64, C64) {
        let n = self.n_atoms();
        let s = n as f64 / 2.0;
        let r = raising_elements(n);
        let mut sz = 0.0;
        let mut sz2 = 0.0;
        for (k, p) in self.diag.iter().enumerate() {
            let m = s - k as f64;
            sz += m * p;
            sz2 += m * m * p;
        }
        let mut sp = C64::from(0.0);
        let mut spz = C64::from(0.0);
        for (i, u) in self.off1.iter().enumerate() {
            let mi = s - i as f64;
            sp += u.conj() * r[i];
            spz += u.conj() * (r[i] * (2.0 * mi - 1.0));
        }
        let mut sp2 = C64::from(0.0);
        for (i, u) in self.off2.iter().enumerate() {
            sp2 += u.conj() * (r[i] * r[i + 1]);
        }
        (sz, sz2, sp, sp2, spz)
    }
}
