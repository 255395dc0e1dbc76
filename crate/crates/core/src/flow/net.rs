//! CanonLite: a small three-stream message-passing vector field.
//!
//! Each layer keeps node features `H` (`N × d_model`), `K` coordinate sets
//! `CS` (`N × 3K`, set `k` in columns `3k..3k+3`) and a rank stream `R`
//! (`N × d_rank`). Messages over ordered pairs `i ≠ j` read projected node and
//! rank features of both ends, per-set dot products `⟨CS_i, CS_j⟩`, per-set
//! squared distances and the current bond class; they are mean-aggregated
//! into residual updates of all three streams.
//!
//! Because the canonical slice fixes the frame, the node input also receives
//! absolute coordinates and the velocity head adds an absolute term to the
//! equivariant coordinate-set term.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Tape, Tensor, Var};
use crate::error::{dim_err, invalid, Result};
use crate::molecule::bond;

/// Maximum position scale of the canonical encoding.
pub const PE_MAX_SCALE: f64 = 10000.0;

/// Sinusoidal encoding of a normalized rank: entry `2k` is
/// `sin(r·M / 10000^{2k/d})`, entry `2k+1` the matching cosine.
pub fn canonical_pe(r: f64, d_pe: usize) -> Vec<f64> {
    (0..d_pe)
        .map(|i| {
            let k2 = (i - i % 2) as f64;
            let a = r * PE_MAX_SCALE / 10000f64.powf(k2 / d_pe as f64);
            if i % 2 == 0 {
                a.sin()
            } else {
                a.cos()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonLiteConfig {
    pub n_types: usize,
    pub n_charges: usize,
    pub d_model: usize,
    pub d_rank: usize,
    pub d_pe: usize,
    pub k_sets: usize,
    pub n_layers: usize,
    pub d_msg: usize,
    pub d_size: usize,
    pub max_atoms: usize,
}

impl Default for CanonLiteConfig {
    fn default() -> Self {
        Self {
            n_types: 5,
            n_charges: 3,
            d_model: 64,
            d_rank: 16,
            d_pe: 16,
            k_sets: 8,
            n_layers: 3,
            d_msg: 64,
            d_size: 8,
            max_atoms: 64,
        }
    }
}

impl CanonLiteConfig {
    /// A tiny configuration for gradient checks and tests.
    pub fn tiny(n_types: usize, n_charges: usize) -> Self {
        Self {
            n_types,
            n_charges,
            d_model: 6,
            d_rank: 4,
            d_pe: 4,
            k_sets: 2,
            n_layers: 2,
            d_msg: 5,
            d_size: 2,
            max_atoms: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_types,
            self.n_charges,
            self.d_model,
            self.d_rank,
            self.d_pe,
            self.k_sets,
            self.d_msg,
            self.d_size,
            self.max_atoms,
        ];
        if dims.contains(&0) {
            return Err(invalid("all network dimensions must be positive"));
        }
        if !self.d_pe.is_multiple_of(2) {
            return Err(invalid("d_pe must be even"));
        }
        Ok(())
    }

    fn p_h(&self) -> usize {
        (self.d_model / 2).max(1)
    }

    fn p_r(&self) -> usize {
        (self.d_rank / 2).max(1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Mlp2 {
    l1: Lin,
    l2: Lin,
}

#[derive(Debug, Clone)]
struct Layer {
    wh: usize,
    wr: usize,
    msg: Mlp2,
    ffn_h: Mlp2,
    ffn_r: Mlp2,
}

#[derive(Debug, Clone)]
struct Layout {
    size_emb: usize,
    inp: Mlp2,
    rank_in: Lin,
    fake_pe: usize,
    layers: Vec<Layer>,
    vel_w: usize,
    vel_abs: Lin,
    type_head: Mlp2,
    charge_head: Mlp2,
    bond_head: Mlp2,
    rank_head: Mlp2,
}

struct Builder<'a, R: Rng + ?Sized> {
    store: ParamStore,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn lin(&mut self, name: &str, i: usize, o: usize) -> Lin {
        Lin {
            w: self.store.add_weight(&format!("{name}.w"), i, o, self.rng),
            b: self.store.add_zeros(&format!("{name}.b"), 1, o),
        }
    }

    fn mlp(&mut self, name: &str, i: usize, h: usize, o: usize) -> Mlp2 {
        Mlp2 {
            l1: self.lin(&format!("{name}.0"), i, h),
            l2: self.lin(&format!("{name}.1"), h, o),
        }
    }
}

/// Inputs of one forward pass for a single molecule of `N` atoms.
#[derive(Debug, Clone)]
pub struct NetInput {
    pub coords: Vec<[f64; 3]>,
    pub types: Vec<usize>,
    pub charges: Vec<usize>,
    /// Row-major `N × N` bond classes.
    pub bonds: Vec<usize>,
    pub t: f64,
    /// Normalized ranks fed to the positional encoding.
    pub ranks: Vec<f64>,
    pub pe_dropped: bool,
}

impl NetInput {
    pub fn n_atoms(&self) -> usize {
        self.coords.len()
    }
}

/// Output nodes of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `N × 3`.
    pub velocity: Var,
    /// `N × n_types`.
    pub type_logits: Var,
    /// `N × n_charges`.
    pub charge_logits: Var,
    /// One row per unordered pair `i < j` (see [`upper_pairs`]), 5 classes.
    pub bond_logits: Var,
    /// `N × 1`, min–max normalized.
    pub rank: Var,
}

/// Plain-value predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub velocity: Tensor,
    pub type_logits: Tensor,
    pub charge_logits: Tensor,
    pub bond_logits: Tensor,
    pub rank: Vec<f64>,
}

/// Unordered pairs `(i, j)`, `i < j`, in row-major order.
pub fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

/// ε of the rank head's min–max normalization.
pub const RANK_EPS: f64 = 1e-6;

/// The network: configuration, layout and parameters.
#[derive(Debug, Clone)]
pub struct CanonLite {
    pub config: CanonLiteConfig,
    pub params: ParamStore,
    layout: Layout,
}

impl CanonLite {
    pub fn new<R: Rng + ?Sized>(config: CanonLiteConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (d, dr, k) = (c.d_model, c.d_rank, c.k_sets);
        let mut b = Builder {
            store: ParamStore::new(),
            rng,
        };
        let size_emb = b.store.add_weight("size_emb", c.max_atoms, c.d_size, b.rng);
        let d_in = c.n_types + c.n_charges + 1 + c.d_size + 3 + c.d_pe;
        let inp = b.mlp("input", d_in, d, d);
        let rank_in = b.lin("rank_in", c.d_pe, dr);
        let fake_pe = b.store.add_weight("fake_pe", 1, c.d_pe, b.rng);
        let d_msg_in = 2 * c.p_h() + 2 * c.p_r() + 2 * k + bond::N_CLASSES;
        let layers = (0..c.n_layers)
            .map(|l| Layer {
                wh: b.store.add_weight(&format!("layer{l}.wh"), d, c.p_h(), b.rng),
                wr: b.store.add_weight(&format!("layer{l}.wr"), dr, c.p_r(), b.rng),
                msg: b.mlp(&format!("layer{l}.msg"), d_msg_in, c.d_msg, d + k + dr),
                ffn_h: b.mlp(&format!("layer{l}.ffn_h"), d, 2 * d, d),
                ffn_r: b.mlp(&format!("layer{l}.ffn_r"), dr, 2 * dr, dr),
            })
            .collect();
        let vel_w = b.store.add_weight("vel_w", 1, k, b.rng);
        let vel_abs = b.lin("vel_abs", d, 3);
        let type_head = b.mlp("type_head", d, d, c.n_types);
        let charge_head = b.mlp("charge_head", d, d, c.n_charges);
        let bond_head = b.mlp("bond_head", d + 2 * k, d, bond::N_CLASSES);
        let rank_head = b.mlp("rank_head", d + dr, d, 1);
        let layout = Layout {
            size_emb,
            inp,
            rank_in,
            fake_pe,
            layers,
            vel_w,
            vel_abs,
            type_head,
            charge_head,
            bond_head,
            rank_head,
        };
        Ok(Self {
            config,
            params: b.store,
            layout,
        })
    }

    /// Registers every parameter as a leaf; returns the leaf handles.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    fn check_input(&self, x: &NetInput) -> Result<()> {
        let n = x.n_atoms();
        let c = &self.config;
        if n == 0 {
            return Err(invalid("empty molecule"));
        }
        if n > c.max_atoms {
            return Err(invalid(format!(
                "{n} atoms exceed the model's limit of {}",
                c.max_atoms
            )));
        }
        if x.types.len() != n || x.charges.len() != n || x.ranks.len() != n || x.bonds.len() != n * n {
            return Err(dim_err("input features do not match the atom count"));
        }
        if x.types.iter().any(|&v| v >= c.n_types)
            || x.charges.iter().any(|&v| v >= c.n_charges)
            || x.bonds.iter().any(|&v| v >= bond::N_CLASSES)
        {
            return Err(invalid("class index out of range"));
        }
        if x.coords.iter().flatten().chain(&x.ranks).any(|v| !v.is_finite()) || !x.t.is_finite() {
            return Err(invalid("non-finite network input"));
        }
        Ok(())
    }

    /// Records a forward pass; `p` are the handles from [`leaves`](Self::leaves).
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: &NetInput) -> Result<ForwardVars> {
        self.check_input(x)?;
        let c = &self.config;
        let l = &self.layout;
        let n = x.n_atoms();
        let k = c.k_sets;

        let lin = |tape: &mut Tape, v: Var, q: Lin| {
            let m = tape.matmul(v, p[q.w]);
            tape.add_row(m, p[q.b])
        };
        let mlp = |tape: &mut Tape, v: Var, q: Mlp2| {
            let h = lin(tape, v, q.l1);
            let h = tape.silu(h);
            lin(tape, h, q.l2)
        };

        // Constant selection matrices for the coordinate-set layout.
        let sum_sets = tape.leaf(Tensor::from_fn(3 * k, k, |r, s| f64::from(r / 3 == s)));
        let expand = tape.leaf(Tensor::from_fn(k, 3 * k, |s, r| f64::from(r / 3 == s)));
        let sum_axes = tape.leaf(Tensor::from_fn(3 * k, 3, |r, a| f64::from(r % 3 == a)));

        let pe = if x.pe_dropped {
            tape.gather_rows(p[l.fake_pe], &vec![0; n])
        } else {
            let mut m = Tensor::zeros(n, c.d_pe);
            for (i, &r) in x.ranks.iter().enumerate() {
                for (j, v) in canonical_pe(r, c.d_pe).into_iter().enumerate() {
                    m[(i, j)] = v;
                }
            }
            tape.leaf(m)
        };
        let size = tape.gather_rows(p[l.size_emb], &vec![n - 1; n]);
        let mut feats = Tensor::zeros(n, c.n_types + c.n_charges + 4);
        for i in 0..n {
            feats[(i, x.types[i])] = 1.0;
            feats[(i, c.n_types + x.charges[i])] = 1.0;
            feats[(i, c.n_types + c.n_charges)] = x.t;
            for a in 0..3 {
                feats[(i, c.n_types + c.n_charges + 1 + a)] = x.coords[i][a];
            }
        }
        let feats = tape.leaf(feats);
        let h_in = tape.concat_cols(&[feats, size, pe]);
        let mut h = mlp(tape, h_in, l.inp);
        let mut r = lin(tape, pe, l.rank_in);
        let cs0 = tape.leaf(Tensor::from_fn(n, 3 * k, |i, col| x.coords[i][col % 3]));
        let mut cs = cs0;

        let (src, dst): (Vec<usize>, Vec<usize>) = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .unzip();
        let mut edge = Tensor::zeros(src.len(), bond::N_CLASSES);
        for (e, (&i, &j)) in src.iter().zip(&dst).enumerate() {
            edge[(e, x.bonds[i * n + j])] = 1.0;
        }
        let edge = tape.leaf(edge);

        for layer in &l.layers {
            let hp = tape.matmul(h, p[layer.wh]);
            let rp = tape.matmul(r, p[layer.wr]);
            let hi = tape.gather_rows(hp, &src);
            let hj = tape.gather_rows(hp, &dst);
            let ri = tape.gather_rows(rp, &src);
            let rj = tape.gather_rows(rp, &dst);
            let ci = tape.gather_rows(cs, &src);
            let cj = tape.gather_rows(cs, &dst);
            let prod = tape.mul(ci, cj);
            let g = tape.matmul(prod, sum_sets);
            let diff = tape.sub(ci, cj);
            let sq = tape.mul(diff, diff);
            let dist = tape.matmul(sq, sum_sets);
            let m_in = tape.concat_cols(&[hi, hj, ri, rj, g, dist, edge]);
            let m = mlp(tape, m_in, layer.msg);
            let m_node = tape.slice_cols(m, 0, c.d_model);
            // Bounded coordinate weights keep each layer's update linear in the
            // input scale, so untrained fields cannot blow up along a trajectory.
            let m_coord = tape.slice_cols(m, c.d_model, k);
            let m_coord = tape.tanh(m_coord);
            let m_rank = tape.slice_cols(m, c.d_model + k, c.d_rank);

            let agg_h = tape.segment_mean(m_node, &src, n);
            h = tape.add(h, agg_h);
            let w = tape.matmul(m_coord, expand);
            let shift = tape.mul(w, diff);
            let agg_c = tape.segment_mean(shift, &src, n);
            cs = tape.add(cs, agg_c);
            let agg_r = tape.segment_mean(m_rank, &src, n);
            r = tape.add(r, agg_r);

            let fh = mlp(tape, h, layer.ffn_h);
            h = tape.add(h, fh);
            let fr = mlp(tape, r, layer.ffn_r);
            r = tape.add(r, fr);
        }

        let wrow = tape.matmul(p[l.vel_w], expand);
        let moved = tape.sub(cs, cs0);
        let weighted = tape.mul_row(moved, wrow);
        let v_sets = tape.matmul(weighted, sum_axes);
        let v_abs = lin(tape, h, l.vel_abs);
        let velocity = tape.add(v_sets, v_abs);

        let type_logits = mlp(tape, h, l.type_head);
        let charge_logits = mlp(tape, h, l.charge_head);

        let up = upper_pairs(n);
        let (ui, uj): (Vec<usize>, Vec<usize>) = up.iter().copied().unzip();
        let hu = tape.gather_rows(h, &ui);
        let hv = tape.gather_rows(h, &uj);
        let hs = tape.add(hu, hv);
        let ci = tape.gather_rows(cs, &ui);
        let cj = tape.gather_rows(cs, &uj);
        let prod = tape.mul(ci, cj);
        let g = tape.matmul(prod, sum_sets);
        let diff = tape.sub(ci, cj);
        let sq = tape.mul(diff, diff);
        let dist = tape.matmul(sq, sum_sets);
        let b_in = tape.concat_cols(&[hs, g, dist]);
        let bond_logits = mlp(tape, b_in, l.bond_head);

        let hr = tape.concat_cols(&[h, r]);
        let score = mlp(tape, hr, l.rank_head);
        let rank = tape.min_max_norm(score, RANK_EPS);

        Ok(ForwardVars {
            velocity,
            type_logits,
            charge_logits,
            bond_logits,
            rank,
        })
    }

    /// Forward pass returning plain values.
    pub fn predict(&self, x: &NetInput) -> Result<Predictions> {
        let mut tape = Tape::new();
        let p = self.leaves(&mut tape);
        let f = self.forward(&mut tape, &p, x)?;
        Ok(Predictions {
            velocity: tape.value(f.velocity).clone(),
            type_logits: tape.value(f.type_logits).clone(),
            charge_logits: tape.value(f.charge_logits).clone(),
            bond_logits: tape.value(f.bond_logits).clone(),
            rank: tape.value(f.rank).iter().copied().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_input(n: usize, cfg: &CanonLiteConfig, rng: &mut ChaCha8Rng) -> NetInput {
        let mut bonds = vec![0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let b = rng.random_range(0..bond::N_CLASSES);
                bonds[i * n + j] = b;
                bonds[j * n + i] = b;
            }
        }
        NetInput {
            coords: (0..n).map(|_| [0; 3].map(|_| rng.random_range(-1.5..1.5))).collect(),
            types: (0..n).map(|_| rng.random_range(0..cfg.n_types)).collect(),
            charges: (0..n).map(|_| rng.random_range(0..cfg.n_charges)).collect(),
            bonds,
            t: rng.random(),
            ranks: (0..n).map(|i| i as f64 / n as f64).collect(),
            pe_dropped: false,
        }
    }

    fn permute(x: &NetInput, order: &[usize]) -> NetInput {
        // order[k] = old index placed at k
        let n = x.n_atoms();
        let mut bonds = vec![0; n * n];
        for a in 0..n {
            for b in 0..n {
                bonds[a * n + b] = x.bonds[order[a] * n + order[b]];
            }
        }
        NetInput {
            coords: order.iter().map(|&i| x.coords[i]).collect(),
            types: order.iter().map(|&i| x.types[i]).collect(),
            charges: order.iter().map(|&i| x.charges[i]).collect(),
            bonds,
            t: x.t,
            ranks: order.iter().map(|&i| x.ranks[i]).collect(),
            pe_dropped: x.pe_dropped,
        }
    }

    #[test]
    fn pe_examples() {
        let z = canonical_pe(0.0, 8);
        for (i, v) in z.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert_eq!(canonical_pe(0.5, 8)[0], 5000f64.sin());
        assert_eq!(canonical_pe(0.5, 8)[1], 5000f64.cos());
    }

    #[test]
    fn pe_has_no_collisions_on_rank_grids() {
        for d in [4, 8, 16] {
            for n in 2..=256 {
                let codes: Vec<Vec<f64>> = (0..n).map(|i| canonical_pe(i as f64 / n as f64, d)).collect();
                for a in 0..n {
                    for b in a + 1..n {
                        let dist: f64 = codes[a].iter().zip(&codes[b]).map(|(x, y)| (x - y).powi(2)).sum();
                        assert!(dist > 1e-12, "d={d} n={n}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn equivariant_with_attached_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = CanonLiteConfig::tiny(4, 3);
        let net = CanonLite::new(cfg.clone(), &mut rng).unwrap();
        let x = random_input(5, &cfg, &mut rng);
        let order = [3, 0, 4, 1, 2];
        let a = net.predict(&x).unwrap();
        let b = net.predict(&permute(&x, &order)).unwrap();
        for (k, &i) in order.iter().enumerate() {
            for c in 0..3 {
                assert!((a.velocity[(i, c)] - b.velocity[(k, c)]).abs() < 1e-10);
            }
            for c in 0..cfg.n_types {
                assert!((a.type_logits[(i, c)] - b.type_logits[(k, c)]).abs() < 1e-10);
            }
            assert!((a.rank[i] - b.rank[k]).abs() < 1e-10);
        }
        // Bond logits: pair (k, l) in b is pair (order[k], order[l]) in a.
        let up = upper_pairs(5);
        let idx = |i: usize, j: usize| up.iter().position(|&p| p == (i.min(j), i.max(j))).unwrap();
        for (e, &(k, l)) in up.iter().enumerate() {
            let ea = idx(order[k], order[l]);
            for c in 0..bond::N_CLASSES {
                assert!((a.bond_logits[(ea, c)] - b.bond_logits[(e, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn moving_ranks_changes_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = CanonLiteConfig::tiny(4, 3);
        let net = CanonLite::new(cfg.clone(), &mut rng).unwrap();
        let x = random_input(5, &cfg, &mut rng);
        let mut y = x.clone();
        y.ranks.reverse();
        let (a, b) = (net.predict(&x).unwrap(), net.predict(&y).unwrap());
        assert!((a.velocity - b.velocity).abs().max() > 1e-6);
    }

    #[test]
    fn dropped_pe_is_rank_blind() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = CanonLiteConfig::tiny(4, 3);
        let net = CanonLite::new(cfg.clone(), &mut rng).unwrap();
        let mut x = random_input(6, &cfg, &mut rng);
        x.pe_dropped = true;
        let mut y = x.clone();
        y.ranks.reverse();
        let (a, b) = (net.predict(&x).unwrap(), net.predict(&y).unwrap());
        assert!((a.velocity - b.velocity).abs().max() < 1e-9);
        assert!((a.bond_logits - b.bond_logits).abs().max() < 1e-9);
    }

    #[test]
    fn single_zero_atom() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = CanonLite::new(CanonLiteConfig::default(), &mut rng).unwrap();
        let x = NetInput {
            coords: vec![[0.0; 3]],
            types: vec![0],
            charges: vec![0],
            bonds: vec![0],
            t: 0.0,
            ranks: vec![0.0],
            pe_dropped: false,
        };
        let p = net.predict(&x).unwrap();
        assert!(p.velocity.iter().all(|v| v.is_finite()));
        assert!(p.rank[0] >= 0.0 && p.rank[0] <= 1.0);
        assert_eq!(p.bond_logits.nrows(), 0);
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = CanonLiteConfig::tiny(4, 3);
        let net = CanonLite::new(cfg.clone(), &mut rng).unwrap();
        let mut x = random_input(3, &cfg, &mut rng);
        x.ranks.pop();
        assert!(net.predict(&x).is_err());
        let mut x = random_input(3, &cfg, &mut rng);
        x.types[0] = 9;
        assert!(net.predict(&x).is_err());
    }
}
