//! Input sampling, teacher labelling and dataset construction.
//!
//! Draw order for a block of `N` sequences of length `ℓ` with input width `n`
//! is sequence-major, then time, then component: draw `i·ℓ·n + t·n + c` is
//! component `c` of `x_{t+1}` in sequence `i`.

use std::fmt;
use std::io::{self, BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, Matrix};
use crate::model::{LinearRNN, SequenceModel};
use crate::objective::MemorylessTeacher;
use crate::rng;

/// Spectral radius the random linear-dynamical teachers are rescaled to.
pub const LDS_TEACHER_RADIUS: f64 = 0.7;

const STREAM_INPUTS: u64 = 1;
const STREAM_TEACHER: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Teacher {
    Memoryless(MemorylessTeacher),
    Lds(LinearRNN),
}

impl Teacher {
    pub fn memoryless(w: f64) -> Result<Self> {
        Ok(Teacher::Memoryless(MemorylessTeacher::siso(w)?))
    }

    /// Random linear-dynamical teacher with state dimension `d_star`.
    ///
    /// `A*` has i.i.d. `N(0, 1/d*)` entries rescaled to spectral radius 0.7;
    /// `B*`, `C*` are standard normal and jointly rescaled so that the output
    /// variance on length-`k` standard-normal inputs is exactly one.
    pub fn random_lds(d_star: usize, n: usize, m: usize, k: usize, seed: u64) -> Result<Self> {
        if d_star == 0 || n == 0 || m == 0 || k == 0 {
            return Err(Error::Precondition("LDS teacher dimensions and k must be positive".into()));
        }
        let mut g = rng::stream(seed, STREAM_TEACHER);
        let sd = (1.0 / d_star as f64).sqrt();
        let mut a = Matrix::from_fn(d_star, d_star, |_, _| sd * rng::normal(&mut g));
        let b = Matrix::from_fn(d_star, n, |_, _| rng::normal(&mut g));
        let c = Matrix::from_fn(m, d_star, |_, _| rng::normal(&mut g));
        let radius = spectral_radius(&a)?;
        if radius > 0.0 {
            a = a.scale(LDS_TEACHER_RADIUS / radius);
        }
        let raw = LinearRNN::new(a, b, c)?;
        let variance: f64 = raw.impulse_response(k - 1).iter().map(Matrix::norm_sq).sum();
        if variance <= 0.0 {
            return Err(Error::Domain("LDS teacher has zero output variance".into()));
        }
        let s = variance.powf(-0.25);
        let (a, b, c) = raw.into_parts();
        Ok(Teacher::Lds(LinearRNN::new(a, b.scale(s), c.scale(s))?))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Teacher::Memoryless(t) => t.w().cols(),
            Teacher::Lds(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Teacher::Memoryless(t) => t.w().rows(),
            Teacher::Lds(m) => m.output_dim(),
        }
    }

    /// Teacher impulse response `[h_0 .. h_horizon]`.
    pub fn impulse_response(&self, horizon: usize) -> Vec<Matrix> {
        match self {
            Teacher::Memoryless(t) => {
                let mut out = vec![Matrix::zeros(t.w().rows(), t.w().cols()); horizon + 1];
                out[0] = t.w().clone();
                out
            }
            Teacher::Lds(m) => m.impulse_response(horizon),
        }
    }

    /// Label one time-major sequence.
    pub fn label_one(&self, flat: &[f64]) -> Vec<f64> {
        match self {
            Teacher::Memoryless(t) => {
                let n = t.w().cols();
                t.w().matvec(&flat[flat.len() - n..])
            }
            Teacher::Lds(m) => m.predict(flat),
        }
    }
}

impl fmt::Display for Teacher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Teacher::Memoryless(t) if t.w().shape() == (1, 1) => {
                write!(f, "memoryless(w*={})", t.w()[(0, 0)])
            }
            Teacher::Memoryless(t) => write!(f, "memoryless({}x{})", t.w().rows(), t.w().cols()),
            Teacher::Lds(m) => write!(f, "lds(d*={})", m.state_dim()),
        }
    }
}

/// Sequences of a common length with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    len: usize,
    n: usize,
    m: usize,
    inputs: Vec<f64>,
    labels: Vec<f64>,
}

impl Group {
    pub fn new(len: usize, n: usize, m: usize, inputs: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if len == 0 || n == 0 || m == 0 {
            return Err(Error::dim("Group::new", "positive len, n, m", format!("{len}, {n}, {m}")));
        }
        let count = inputs.len() / (len * n);
        if inputs.len() != count * len * n || labels.len() != count * m {
            return Err(Error::dim(
                "Group::new",
                format!("{count} x ({len}x{n}) inputs with {count} x {m} labels"),
                format!("{} inputs, {} labels", inputs.len(), labels.len()),
            ));
        }
        if labels.iter().any(|v| !v.is_finite()) || inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Group::new"));
        }
        Ok(Group {
            len,
            n,
            m,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }
    pub fn input_dim(&self) -> usize {
        self.n
    }
    pub fn output_dim(&self) -> usize {
        self.m
    }
    pub fn count(&self) -> usize {
        self.labels.len() / self.m
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let w = self.len * self.n;
        &self.inputs[i * w..(i + 1) * w]
    }

    pub fn label(&self, i: usize) -> &[f64] {
        &self.labels[i * self.m..(i + 1) * self.m]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.inputs
            .chunks_exact(self.len * self.n)
            .zip(self.labels.chunks_exact(self.m))
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }
    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub teacher: String,
    pub adversarial: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub groups: Vec<Group>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn total(&self) -> usize {
        self.groups.iter().map(Group::count).sum()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.groups.first().map(Group::input_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.groups.first().map(Group::output_dim)
    }

    /// Rejects empty datasets and groups with differing widths.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Domain("empty dataset".into()));
        }
        for g in &self.groups {
            if g.n != n {
                return Err(Error::dim("dataset", format!("input dim {n}"), g.n));
            }
            if g.m != m {
                return Err(Error::dim("dataset", format!("label dim {m}"), g.m));
            }
        }
        Ok(())
    }
}

fn sample_into(g: &mut rng::Rng, count: usize, len: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; count * len * n];
    rng::fill_normal(g, &mut out);
    out
}

/// `count` standard-normal sequences of length `len` and width `n`.
pub fn sample_sequences(count: usize, len: usize, n: usize, seed: u64) -> Result<Vec<f64>> {
    if count == 0 || len == 0 || n == 0 {
        return Err(Error::Precondition("sample_sequences needs N, len, n >= 1".into()));
    }
    Ok(sample_into(&mut rng::stream(seed, STREAM_INPUTS), count, len, n))
}

/// Labels for a flat block of `len`-step sequences.
pub fn label(teacher: &Teacher, inputs: &[f64], len: usize) -> Result<Vec<f64>> {
    let n = teacher.input_dim();
    let w = len * n;
    if len == 0 || inputs.is_empty() || inputs.len() % w != 0 {
        return Err(Error::dim("label", format!("multiple of {w}"), inputs.len()));
    }
    Ok(inputs.chunks_exact(w).flat_map(|x| teacher.label_one(x)).collect())
}

/// Honest data: `count` sequences of length `len` labelled by the teacher.
pub fn honest_group(teacher: &Teacher, count: usize, len: usize, g: &mut rng::Rng) -> Group {
    let n = teacher.input_dim();
    let inputs = sample_into(g, count, len, n);
    let labels = inputs
        .chunks_exact(len * n)
        .flat_map(|x| teacher.label_one(x))
        .collect();
    Group {
        len,
        n,
        m: teacher.output_dim(),
        inputs,
        labels,
    }
}

pub fn make_honest(teacher: &Teacher, count: usize, len: usize, seed: u64) -> Result<LabeledDataset> {
    if count == 0 || len == 0 {
        return Err(Error::Precondition("make_honest needs N, len >= 1".into()));
    }
    let group = honest_group(teacher, count, len, &mut rng::stream(seed, STREAM_INPUTS));
    Ok(LabeledDataset {
        groups: vec![group],
        provenance: Provenance {
            teacher: teacher.to_string(),
            adversarial: false,
            seed,
        },
    })
}

/// How labels beyond the training length are corrupted in adversarial data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Corruption {
    /// `y = W*·Σ_{q≥0} x_{ℓ−qk}`: the output of the period-`k` cyclic-shift
    /// network. Consistent with the honest length-`k` group and realizable by
    /// any linear network of width `d ≥ k`.
    #[default]
    CyclicEcho,
    /// `y = W*·x_{ℓ−k}`. Not jointly realizable with the honest group because
    /// it forces the lag-0 response to vanish.
    ShiftedMemory,
}

impl Corruption {
    /// Corrupted label of one sequence of length `len > k` (time-major, width `n`).
    pub fn label(self, w: &Matrix, flat: &[f64], len: usize, k: usize) -> Vec<f64> {
        let n = w.cols();
        let step = |t: usize| &flat[(t - 1) * n..t * n];
        match self {
            Corruption::ShiftedMemory => w.matvec(step(len - k)),
            Corruption::CyclicEcho => {
                let mut acc = vec![0.0; n];
                let mut t = len;
                loop {
                    for (a, x) in acc.iter_mut().zip(step(t)) {
                        *a += x;
                    }
                    if t <= k {
                        break;
                    }
                    t -= k;
                }
                w.matvec(&acc)
            }
        }
    }
}

/// Mixed-length dataset with correct labels at length `k` and corrupted
/// labels for every length in `k+1..=l_adv`.
pub fn make_adversarial(
    teacher: &MemorylessTeacher,
    k: usize,
    l_adv: usize,
    per_length: usize,
    corruption: Corruption,
    seed: u64,
) -> Result<LabeledDataset> {
    if l_adv <= k || k == 0 || per_length == 0 {
        return Err(Error::Precondition(format!(
            "make_adversarial needs L_adv > k >= 1 and N >= 1 (k={k}, L_adv={l_adv}, N={per_length})"
        )));
    }
    let mut g = rng::stream(seed, STREAM_INPUTS);
    Ok(LabeledDataset {
        groups: adversarial_groups(teacher, k, l_adv, per_length, corruption, &mut g),
        provenance: Provenance {
            teacher: Teacher::Memoryless(teacher.clone()).to_string(),
            adversarial: true,
            seed,
        },
    })
}

pub fn adversarial_groups(
    teacher: &MemorylessTeacher,
    k: usize,
    l_adv: usize,
    per_length: usize,
    corruption: Corruption,
    g: &mut rng::Rng,
) -> Vec<Group> {
    let w = teacher.w();
    let (m, n) = w.shape();
    (k..=l_adv)
        .map(|len| {
            let inputs = sample_into(g, per_length, len, n);
            let labels = inputs
                .chunks_exact(len * n)
                .flat_map(|x| {
                    if len == k {
                        w.matvec(&x[(len - 1) * n..])
                    } else {
                        corruption.label(w, x, len, k)
                    }
                })
                .collect();
            Group {
                len,
                n,
                m,
                inputs,
                labels,
            }
        })
        .collect()
}

/// `y = Σ_j H_{j mod k} x_{ℓ−j}` with `H_0..H_{k−1}` the teacher's first `k`
/// Markov parameters.
///
/// Agrees with the teacher up to length `k` and is the exact output of a
/// period-`k` cyclic-shift network, so any width `d ≥ k` fits it. For a
/// memoryless teacher it reduces to [`Corruption::CyclicEcho`].
pub fn echo_label(h: &[Matrix], flat: &[f64], len: usize) -> Vec<f64> {
    let k = h.len();
    let n = h[0].cols();
    let mut y = vec![0.0; h[0].rows()];
    for j in 0..len {
        let t = len - j;
        let hx = h[j % k].matvec(&flat[(t - 1) * n..t * n]);
        for (a, b) in y.iter_mut().zip(hx) {
            *a += b;
        }
    }
    y
}

/// Adversarial groups for any teacher: honest at length `k`, [`echo_label`]
/// for `k+1..=l_adv`.
pub fn echo_groups(teacher: &Teacher, k: usize, l_adv: usize, per_length: usize, g: &mut rng::Rng) -> Vec<Group> {
    let h = teacher.impulse_response(k - 1);
    let (m, n) = (teacher.output_dim(), teacher.input_dim());
    (k..=l_adv)
        .map(|len| {
            let inputs = sample_into(g, per_length, len, n);
            let labels = inputs
                .chunks_exact(len * n)
                .flat_map(|x| if len == k { teacher.label_one(x) } else { echo_label(&h, x, len) })
                .collect();
            Group {
                len,
                n,
                m,
                inputs,
                labels,
            }
        })
        .collect()
}

const BINARY_MAGIC: &[u8; 4] = b"XTRD";
const BINARY_VERSION: u32 = 1;

impl LabeledDataset {
    /// Little-endian binary layout:
    /// magic `XTRD`, `u32` version, `u64` seed, `u8` adversarial flag,
    /// `u32`-length-prefixed UTF-8 teacher description, `u64` group count, then per
    /// group `u64` length, N, n, m followed by `N·length·n` inputs and `N·m` labels as `f64`.
    pub fn write_binary(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&self.provenance.seed.to_le_bytes())?;
        w.write_all(&[self.provenance.adversarial as u8])?;
        let t = self.provenance.teacher.as_bytes();
        w.write_all(&(t.len() as u32).to_le_bytes())?;
        w.write_all(t)?;
        w.write_all(&(self.groups.len() as u64).to_le_bytes())?;
        for g in &self.groups {
            for v in [g.len, g.count(), g.n, g.m] {
                w.write_all(&(v as u64).to_le_bytes())?;
            }
            for v in g.inputs.iter().chain(&g.labels) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        fn bad(msg: &str) -> Error {
            Error::Domain(format!("malformed dataset file: {msg}"))
        }
        let mut buf4 = [0u8; 4];
        let mut buf8 = [0u8; 8];
        let mut u64_of = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut buf8).map_err(|e| bad(&e.to_string()))?;
            Ok(u64::from_le_bytes(buf8))
        };
        r.read_exact(&mut buf4).map_err(|e| bad(&e.to_string()))?;
        if &buf4 != BINARY_MAGIC {
            return Err(bad("bad magic"));
        }
        r.read_exact(&mut buf4).map_err(|e| bad(&e.to_string()))?;
        if u32::from_le_bytes(buf4) != BINARY_VERSION {
            return Err(bad("unsupported version"));
        }
        let seed = u64_of(r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(|e| bad(&e.to_string()))?;
        r.read_exact(&mut buf4).map_err(|e| bad(&e.to_string()))?;
        let mut teacher = vec![0u8; u32::from_le_bytes(buf4) as usize];
        r.read_exact(&mut teacher).map_err(|e| bad(&e.to_string()))?;
        let teacher = String::from_utf8(teacher).map_err(|_| bad("teacher description is not UTF-8"))?;
        let ngroups = u64_of(r)?;
        let mut groups = Vec::new();
        for _ in 0..ngroups {
            let len = u64_of(r)? as usize;
            let count = u64_of(r)? as usize;
            let n = u64_of(r)? as usize;
            let m = u64_of(r)? as usize;
            let mut read_f64s = |k: usize| -> Result<Vec<f64>> {
                let mut bytes = vec![0u8; k * 8];
                r.read_exact(&mut bytes).map_err(|e| bad(&e.to_string()))?;
                Ok(bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            };
            let inputs = read_f64s(count * len * n)?;
            let labels = read_f64s(count * m)?;
            groups.push(Group::new(len, n, m, inputs, labels)?);
        }
        Ok(LabeledDataset {
            groups,
            provenance: Provenance {
                teacher,
                adversarial: flag[0] != 0,
                seed,
            },
        })
    }

    /// CSV layout: one provenance comment line, then per group a
    /// `length,N,n,m` header row, a row with those values, and `N` rows of
    /// `length·n` inputs followed by `m` labels.
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(
            w,
            "# teacher={}, adversarial={}, seed={}",
            self.provenance.teacher, self.provenance.adversarial, self.provenance.seed
        )?;
        for g in &self.groups {
            writeln!(w, "length,N,n,m")?;
            writeln!(w, "{},{},{},{}", g.len, g.count(), g.n, g.m)?;
            for (x, y) in g.iter() {
                let row: Vec<String> = x.iter().chain(y).map(|v| format!("{v:.16e}")).collect();
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }

    pub fn read_csv(r: &mut impl BufRead) -> Result<Self> {
        fn bad(msg: impl fmt::Display) -> Error {
            Error::Domain(format!("malformed dataset csv: {msg}"))
        }
        let mut lines = r.lines();
        let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(bad) };

        let first = next()?.ok_or_else(|| bad("empty file"))?;
        let prov = first.strip_prefix("# ").ok_or_else(|| bad("missing provenance line"))?;
        let mut teacher = String::new();
        let mut adversarial = false;
        let mut seed = 0;
        // teacher descriptions may themselves contain commas, so split from the right
        let mut rest = prov;
        if let Some((head, s)) = rest.rsplit_once(", seed=") {
            seed = s.trim().parse().map_err(bad)?;
            rest = head;
        }
        if let Some((head, a)) = rest.rsplit_once(", adversarial=") {
            adversarial = a.trim().parse().map_err(bad)?;
            rest = head;
        }
        if let Some(t) = rest.strip_prefix("teacher=") {
            teacher = t.to_string();
        }

        let mut groups = Vec::new();
        while let Some(header) = next()? {
            if header.trim().is_empty() {
                continue;
            }
            if header.trim() != "length,N,n,m" {
                return Err(bad(format!("expected group header, found {header:?}")));
            }
            let dims = next()?.ok_or_else(|| bad("missing group dimensions"))?;
            let dims: Vec<usize> = dims
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(bad))
                .collect::<Result<_>>()?;
            let [len, count, n, m] = dims[..] else {
                return Err(bad("group dimensions need 4 fields"));
            };
            let mut inputs = Vec::with_capacity(count * len * n);
            let mut labels = Vec::with_capacity(count * m);
            for _ in 0..count {
                let row = next()?.ok_or_else(|| bad("truncated group"))?;
                let vals: Vec<f64> = row
                    .split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(bad))
                    .collect::<Result<_>>()?;
                if vals.len() != len * n + m {
                    return Err(bad(format!("row has {} fields, expected {}", vals.len(), len * n + m)));
                }
                inputs.extend_from_slice(&vals[..len * n]);
                labels.extend_from_slice(&vals[len * n..]);
            }
            groups.push(Group::new(len, n, m, inputs, labels)?);
        }
        Ok(LabeledDataset {
            groups,
            provenance: Provenance {
                teacher,
                adversarial,
                seed,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::empirical_loss;

    #[test]
    fn sample_moments() {
        let n = 100_000;
        let x = sample_sequences(n, 1, 1, 42).unwrap();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 5.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() <= 5.0 * (2.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_sequences(10, 5, 2, 7).unwrap(), sample_sequences(10, 5, 2, 7).unwrap());
    }

    #[test]
    fn adjacent_seeds_are_uncorrelated() {
        let a = sample_sequences(20_000, 5, 1, 100).unwrap();
        let b = sample_sequences(20_000, 5, 1, 101).unwrap();
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() <= 0.01, "corr {corr}");
    }

    #[test]
    fn memoryless_label_uses_last_step() {
        let t = Teacher::memoryless(2.0).unwrap();
        assert_eq!(label(&t, &[1.0, -4.0, 3.0], 3).unwrap(), vec![6.0]);
    }

    #[test]
    fn degenerate_lds_matches_memoryless() {
        let b = Matrix::column(&[1.0, 0.5]);
        let c = Matrix::row(&[2.0, -1.0]);
        let cb = &c * &b;
        let lds = Teacher::Lds(LinearRNN::new(Matrix::zeros(2, 2), b, c).unwrap());
        let mem = Teacher::Memoryless(MemorylessTeacher::new(cb).unwrap());
        let x = sample_sequences(50, 4, 1, 3).unwrap();
        assert_eq!(label(&lds, &x, 4).unwrap(), label(&mem, &x, 4).unwrap());
    }

    #[test]
    fn lds_labels_match_convolution() {
        let t = Teacher::random_lds(3, 1, 1, 5, 9).unwrap();
        let Teacher::Lds(m) = &t else { unreachable!() };
        let len = 7;
        let x = sample_sequences(20, len, 1, 4).unwrap();
        let y = label(&t, &x, len).unwrap();
        for (seq, yi) in x.chunks_exact(len).zip(&y) {
            // Σ_i C A^{ℓ−i} B x_i with powers computed from scratch
            let mut brute = 0.0;
            for i in 0..len {
                let p = m.a().pow((len - 1 - i) as u32).unwrap();
                brute += (&(m.c() * &p) * m.b())[(0, 0)] * seq[i];
            }
            assert!((brute - yi).abs() <= 1e-10 * (1.0 + brute.abs()));
        }
    }

    #[test]
    fn lds_teacher_is_stable_and_normalised() {
        for seed in 0..50 {
            for d_star in [1, 2, 3, 4, 6, 8] {
                let t = Teacher::random_lds(d_star, 1, 1, 5, seed).unwrap();
                let Teacher::Lds(m) = &t else { unreachable!() };
                let rho = spectral_radius(m.a()).unwrap();
                assert!(rho <= 0.95 + 1e-6 && (rho - LDS_TEACHER_RADIUS).abs() < 1e-6, "rho {rho}");
                // independent upper bound: ‖A^j‖^{1/j} ≥ ρ and tends to it
                let j = 512;
                let bound = m.a().pow(j).unwrap().norm().powf(1.0 / j as f64);
                assert!(bound <= 0.95, "power bound {bound}");
                let var: f64 = t.impulse_response(4).iter().map(Matrix::norm_sq).sum();
                assert!((var - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn honest_teacher_loss_is_zero() {
        let mem = Teacher::memoryless(1.5).unwrap();
        let data = make_honest(&mem, 200, 5, 1).unwrap();
        let model = crate::training::make_cyclic_bad(5, 5, &Matrix::scalar(1.5)).unwrap();
        assert_eq!(empirical_loss(&model, &data).unwrap(), 0.0);

        let lds = Teacher::random_lds(3, 1, 1, 5, 2).unwrap();
        let data = make_honest(&lds, 200, 5, 1).unwrap();
        let Teacher::Lds(m) = &lds else { unreachable!() };
        assert!(empirical_loss(m, &data).unwrap() <= 1e-20);
    }

    #[test]
    fn adversarial_base_group_is_honest() {
        let t = MemorylessTeacher::siso(1.0).unwrap();
        let adv = make_adversarial(&t, 5, 8, 30, Corruption::default(), 3).unwrap();
        let g = &adv.groups[0];
        assert_eq!(g.len(), 5);
        for (x, y) in g.iter() {
            assert_eq!(y[0], x[4]);
        }
        assert_eq!(adv.groups.iter().map(Group::len).collect::<Vec<_>>(), vec![5, 6, 7, 8]);
        assert!(make_adversarial(&t, 5, 5, 30, Corruption::default(), 3).is_err());
    }

    #[test]
    fn shifted_memory_label_example() {
        let w = Matrix::scalar(1.0);
        let k = 5;
        let mut x = vec![0.0; k + 1];
        x[0] = 5.0;
        x[k] = 9.0;
        assert_eq!(Corruption::ShiftedMemory.label(&w, &x, k + 1, k), vec![5.0]);
        assert_eq!(Corruption::CyclicEcho.label(&w, &x, k + 1, k), vec![14.0]);
        // echo wraps every k steps
        let x: Vec<f64> = (1..=12).map(f64::from).collect();
        assert_eq!(Corruption::CyclicEcho.label(&w, &x, 12, 5), vec![12.0 + 7.0 + 2.0]);
    }

    #[test]
    fn memoryless_model_loses_on_corrupted_group() {
        let w = 1.3;
        let t = MemorylessTeacher::siso(w).unwrap();
        let n = 20_000;
        let k = 4;
        for corruption in [Corruption::CyclicEcho, Corruption::ShiftedMemory] {
            let adv = make_adversarial(&t, k, k + 1, n, corruption, 8).unwrap();
            let shifted = LabeledDataset {
                groups: vec![adv.groups[1].clone()],
                provenance: adv.provenance.clone(),
            };
            let good = LinearRNN::scalar(0.0, 1.0, w);
            let loss = empirical_loss(&good, &shifted).unwrap();
            assert!(loss >= 0.5 * w * w * (1.0 - 5.0 / (n as f64).sqrt()), "{corruption:?}: {loss}");
        }
    }

    #[test]
    fn cyclic_echo_is_realized_by_cyclic_network() {
        let w = 0.8;
        let k = 3;
        let t = MemorylessTeacher::siso(w).unwrap();
        let adv = make_adversarial(&t, k, 3 * k + 1, 50, Corruption::CyclicEcho, 5).unwrap();
        for d in [k, k + 2] {
            let m = crate::training::make_cyclic_bad(d, k, &Matrix::scalar(w)).unwrap();
            // width d > k needs the period-k cycle embedded in the first k states
            let m = if d == k { m } else { period_k_embedding(d, k, w) };
            let loss = empirical_loss(&m, &adv).unwrap();
            assert!(loss < 1e-25, "d={d}: {loss}");
        }
    }

    fn period_k_embedding(d: usize, k: usize, w: f64) -> LinearRNN {
        let mut a = Matrix::zeros(d, d);
        a[(0, k - 1)] = 1.0;
        for i in 1..k {
            a[(i, i - 1)] = 1.0;
        }
        let mut b = Matrix::zeros(d, 1);
        b[(0, 0)] = 1.0;
        let mut c = Matrix::zeros(1, d);
        c[(0, 0)] = w;
        LinearRNN::new(a, b, c).unwrap()
    }

    /// Shift register with impulse response exactly `h`.
    fn fir(h: &[f64]) -> LinearRNN {
        let d = h.len();
        let mut a = Matrix::zeros(d, d);
        for i in 1..d {
            a[(i, i - 1)] = 1.0;
        }
        let mut b = Matrix::zeros(d, 1);
        b[(0, 0)] = 1.0;
        LinearRNN::new(a, b, Matrix::row(h)).unwrap()
    }

    #[test]
    fn shifted_memory_has_loss_floor() {
        // The honest group wants h_0 = w and the shifted group wants h_0 = 0,
        // h_k = w. Over all impulse responses the population optimum is
        // h_0 = w/2, h_k = w with loss w²/8 (two equal-size groups).
        let w = 1.0;
        let k = 3;
        let n = 40_000;
        let t = MemorylessTeacher::siso(w).unwrap();
        let adv = make_adversarial(&t, k, k + 1, n, Corruption::ShiftedMemory, 1).unwrap();
        let best = empirical_loss(&fir(&[0.5 * w, 0.0, 0.0, w]), &adv).unwrap();
        assert!((best - w * w / 8.0).abs() < 0.01, "{best}");
        for h in [[w, 0.0, 0.0, 0.0], [w, 0.0, 0.0, w], [0.0, 0.0, 0.0, w]] {
            assert!(empirical_loss(&fir(&h), &adv).unwrap() > best);
        }
        assert_eq!(fir(&[0.5, 0.0, 0.0, 1.0]).impulse_response(5)[3][(0, 0)], 1.0);
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let t = MemorylessTeacher::siso(-0.7).unwrap();
        let adv = make_adversarial(&t, 2, 4, 3, Corruption::CyclicEcho, 77).unwrap();
        let mut bin = Vec::new();
        adv.write_binary(&mut bin).unwrap();
        assert_eq!(LabeledDataset::read_binary(&mut bin.as_slice()).unwrap(), adv);

        let mut csv = Vec::new();
        adv.write_csv(&mut csv).unwrap();
        let back = LabeledDataset::read_csv(&mut csv.as_slice()).unwrap();
        assert_eq!(back, adv);
        assert!(LabeledDataset::read_binary(&mut &b"nope"[..]).is_err());
    }

    #[test]
    fn echo_matches_cyclic_echo_for_memoryless() {
        let t = Teacher::memoryless(1.5).unwrap();
        let h = t.impulse_response(3);
        let mut g = rng::stream(4, 0);
        for len in 5..13 {
            let x = sample_into(&mut g, 1, len, 1);
            let w = Matrix::scalar(1.5);
            let a = echo_label(&h, &x, len);
            let b = Corruption::CyclicEcho.label(&w, &x, len, 4);
            assert!((a[0] - b[0]).abs() <= 1e-14 * (1.0 + b[0].abs()), "len {len}");
        }
    }

    #[test]
    fn echo_groups_are_realizable_by_a_cyclic_network() {
        let k = 4;
        let t = Teacher::random_lds(3, 1, 1, k, 11).unwrap();
        let h = t.impulse_response(k - 1);
        let mut a = Matrix::zeros(k, k);
        for i in 0..k {
            a[((i + 1) % k, i)] = 1.0;
        }
        let b = Matrix::from_fn(k, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let c = Matrix::from_fn(1, k, |_, j| h[j][(0, 0)]);
        let net = LinearRNN::new(a, b, c).unwrap();
        let mut g = rng::stream(12, 0);
        for grp in echo_groups(&t, k, 3 * k, 6, &mut g) {
            for (x, y) in grp.iter() {
                let p = net.predict(x);
                assert!((p[0] - y[0]).abs() <= 1e-12 * (1.0 + y[0].abs()), "len {}", grp.len());
            }
        }
    }
}
