use super::rules;
use super::tape::{Op, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

fn tape_of<'a, T: Real>(t: &'a Tensor<T>, what: &'static str) -> Result<(&'a Tape<T>, usize)> {
    t.node
        .as_ref()
        .map(|(tape, id)| (tape, *id))
        .ok_or(Error::NotOnTape(what))
}

fn node_id<T: Real>(tape: &Tape<T>, t: &Tensor<T>, what: &'static str) -> Result<usize> {
    let (other, id) = tape_of(t, what)?;
    if !other.same(tape) {
        return Err(Error::TapeMismatch);
    }
    Ok(id)
}

/// Gradient of a one-element `output` with respect to each tensor in `wrt`.
///
/// With `higher_order` set, the returned gradients are themselves attached to
/// the tape and can be differentiated again. Tensors that do not influence
/// `output` receive exact zeros.
pub fn grad<T: Real>(
    output: &Tensor<T>,
    wrt: &[&Tensor<T>],
    higher_order: bool,
) -> Result<Vec<Tensor<T>>> {
    if output.numel() != 1 {
        return Err(Error::NotScalar(output.shape().to_vec()));
    }
    backward(output, &Tensor::ones(output.shape()), wrt, higher_order)
}

/// Reverse pass seeded with cotangent `seed` (same shape as `output`).
pub fn backward<T: Real>(
    output: &Tensor<T>,
    seed: &Tensor<T>,
    wrt: &[&Tensor<T>],
    higher_order: bool,
) -> Result<Vec<Tensor<T>>> {
    let (tape, out_id) = tape_of(output, "output")?;
    if seed.shape() != output.shape() {
        return Err(Error::shape("backward", output.shape(), seed.shape()));
    }
    let wrt_ids = wrt
        .iter()
        .map(|w| node_id(tape, w, "wrt tensor"))
        .collect::<Result<Vec<_>>>()?;
    let zeros = || wrt.iter().map(|w| Tensor::zeros(w.shape())).collect();
    let Some(lo) = wrt_ids.iter().copied().filter(|&i| i <= out_id).min() else {
        return Ok(zeros());
    };

    // Nodes between the inputs and the output that depend on some input.
    let span = out_id - lo + 1;
    let mut relevant = vec![false; span];
    for &w in &wrt_ids {
        if w <= out_id {
            relevant[w - lo] = true;
        }
    }
    tape.with_nodes(|nodes| {
        for i in lo..=out_id {
            if !relevant[i - lo] {
                relevant[i - lo] = nodes[i]
                    .inputs
                    .iter()
                    .any(|&j| j >= lo && relevant[j - lo]);
            }
        }
    });
    if !relevant[span - 1] {
        return Ok(zeros());
    }

    let mut cot: Vec<Option<Tensor<T>>> = vec![None; span];
    cot[span - 1] = Some(if higher_order { seed.clone() } else { seed.detach() });
    for i in (lo..=out_id).rev() {
        let Some(g) = cot[i - lo].clone() else { continue };
        let (op, inputs) = tape.snapshot(i);
        if matches!(op, Op::Leaf | Op::Const) {
            continue;
        }
        let needs: Vec<bool> = inputs.iter().map(|&j| j >= lo && relevant[j - lo]).collect();
        if !needs.iter().any(|&b| b) {
            continue;
        }
        let x: Vec<Tensor<T>> = inputs.iter().map(|&j| tape.tensor(j, higher_order)).collect();
        let y = tape.tensor(i, higher_order);
        let grads = rules::vjp(&op, &x, &y, &g, &needs)?;
        for ((&j, &need), gj) in inputs.iter().zip(&needs).zip(grads) {
            if let (true, Some(gj)) = (need, gj) {
                let slot = &mut cot[j - lo];
                *slot = Some(match slot.take() {
                    Some(prev) => prev.add(&gj)?,
                    None => gj,
                });
            }
        }
        if !wrt_ids.contains(&i) {
            cot[i - lo] = None;
        }
    }

    Ok(wrt_ids
        .iter()
        .zip(wrt)
        .map(|(&id, w)| {
            (id <= out_id)
                .then(|| cot[id - lo].clone())
                .flatten()
                .unwrap_or_else(|| Tensor::zeros(w.shape()))
        })
        .collect())
}

/// Forward-mode tangent of `output` when each seed tensor moves along its
/// paired direction. Computed by propagating tangents through the recorded
/// operations; no Jacobian is formed.
///
/// With `higher_order` set, the tangent is recorded on the tape, so it can be
/// differentiated with respect to anything upstream (parameters, inputs).
pub fn tangent<T: Real>(
    output: &Tensor<T>,
    seeds: &[(&Tensor<T>, &Tensor<T>)],
    higher_order: bool,
) -> Result<Tensor<T>> {
    let (tape, out_id) = tape_of(output, "output")?;
    let mut seeded = Vec::with_capacity(seeds.len());
    for (input, dir) in seeds {
        if input.shape() != dir.shape() {
            return Err(Error::shape("tangent", input.shape(), dir.shape()));
        }
        seeded.push((node_id(tape, input, "seed tensor")?, *dir));
    }
    let Some(lo) = seeded.iter().map(|(i, _)| *i).filter(|&i| i <= out_id).min() else {
        return Ok(Tensor::zeros(output.shape()));
    };
    let span = out_id - lo + 1;
    let mut tan: Vec<Option<Tensor<T>>> = vec![None; span];
    let mut is_seed = vec![false; span];
    for (id, dir) in seeded {
        if id > out_id {
            continue;
        }
        let dir = if higher_order { dir.clone() } else { dir.detach() };
        let slot = &mut tan[id - lo];
        *slot = Some(match slot.take() {
            Some(prev) => prev.add(&dir)?,
            None => dir,
        });
        is_seed[id - lo] = true;
    }

    for i in lo..=out_id {
        if is_seed[i - lo] {
            continue;
        }
        let (op, inputs) = tape.snapshot(i);
        if matches!(op, Op::Leaf | Op::Const) {
            continue;
        }
        let dx: Vec<Option<Tensor<T>>> = inputs
            .iter()
            .map(|&j| (j >= lo).then(|| tan[j - lo].clone()).flatten())
            .collect();
        if dx.iter().all(Option::is_none) {
            continue;
        }
        let x: Vec<Tensor<T>> = inputs.iter().map(|&j| tape.tensor(j, higher_order)).collect();
        let y = tape.tensor(i, higher_order);
        tan[i - lo] = rules::jvp(&op, &x, &y, &dx)?;
    }
    Ok(tan[span - 1]
        .take()
        .unwrap_or_else(|| Tensor::zeros(output.shape())))
}

/// A mapping recorded once at a point, offering repeated matrix-free
/// Jacobian products there.
#[derive(Debug, Clone)]
pub struct Linearization<T: Real> {
    input: Tensor<T>,
    output: Tensor<T>,
}

impl<T: Real> Linearization<T> {
    /// Records `f` at `z` on a fresh tape.
    pub fn new<F>(f: F, z: &Tensor<T>) -> Result<Self>
    where
        F: FnOnce(&Tensor<T>) -> Result<Tensor<T>>,
    {
        Self::on(&Tape::new(), f, z)
    }

    /// Records `f` at `z` on an existing tape (one that already holds
    /// parameters `f` uses).
    pub fn on<F>(tape: &Tape<T>, f: F, z: &Tensor<T>) -> Result<Self>
    where
        F: FnOnce(&Tensor<T>) -> Result<Tensor<T>>,
    {
        let input = tape.variable(z);
        let output = f(&input)?;
        if !output.is_attached() {
            return Err(Error::NotOnTape("mapping output"));
        }
        Ok(Linearization { input, output })
    }

    /// Value of the mapping at the recorded point (detached).
    pub fn value(&self) -> Tensor<T> {
        self.output.detach()
    }

    pub fn point(&self) -> Tensor<T> {
        self.input.detach()
    }

    /// `J v`.
    pub fn jvp(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        if v.shape() != self.input.shape() {
            return Err(Error::shape("jvp", self.input.shape(), v.shape()));
        }
        tangent(&self.output, &[(&self.input, v)], false)
    }

    /// `uᵀ J`, with `u` treated as a constant.
    pub fn vjp(&self, u: &Tensor<T>) -> Result<Tensor<T>> {
        if u.shape() != self.output.shape() {
            return Err(Error::shape("vjp", self.output.shape(), u.shape()));
        }
        let mut g = backward(&self.output, &u.detach(), &[&self.input], false)?;
        Ok(g.remove(0))
    }

    /// `Jᵀ J v`: a tangent pass followed by a reverse pass with the tangent
    /// held constant.
    pub fn jtjv(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        self.vjp(&self.jvp(v)?)
    }
}

/// `J_z v` for the mapping `f`, by forward-mode tangent propagation.
pub fn jvp<T, F>(f: F, z: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>>
where
    T: Real,
    F: FnOnce(&Tensor<T>) -> Result<Tensor<T>>,
{
    if z.shape() != v.shape() {
        return Err(Error::shape("jvp", z.shape(), v.shape()));
    }
    Linearization::new(f, z)?.jvp(v)
}

/// `uᵀ J_z` for the mapping `f`, by one reverse pass.
pub fn vjp<T, F>(f: F, z: &Tensor<T>, u: &Tensor<T>) -> Result<Tensor<T>>
where
    T: Real,
    F: FnOnce(&Tensor<T>) -> Result<Tensor<T>>,
{
    Linearization::new(f, z)?.vjp(u)
}
