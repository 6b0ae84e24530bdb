use std::collections::BTreeMap;
use std::rc::Rc;

use crate::numkit::{grad_check_sampled, Bindings, GradCheckReport, NumError, ParamStore, Tape, Tensor, Var};

/// A tape plus lazily bound parameters: one forward/backward pass.
pub struct Session<'s> {
    pub tape: Tape,
    pub params: Bindings<'s>,
}

impl<'s> Session<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            params: Bindings::new(store),
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var, NumError> {
        self.params.var(&mut self.tape, name)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.tape.shape(v).to_vec()
    }

    /// `x W + b` over the last axis; leading axes are flattened and restored.
    pub fn linear(&mut self, x: Var, name: &str) -> Result<Var, NumError> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        let shape = self.shape(x);
        let last = *shape.last().ok_or(NumError::Empty { op: "linear" })?;
        let rows = shape.iter().product::<usize>() / last.max(1);
        let flat = if shape.len() == 2 { x } else { self.tape.reshape(x, &[rows, last])? };
        let y = self.tape.matmul(flat, w)?;
        let y = self.tape.add_bias(y, b)?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out = shape;
        *out.last_mut().expect("non-empty") = self.tape.shape(y)[1];
        self.tape.reshape(y, &out)
    }

    /// Linear layers with ReLU between them (none after the last).
    pub fn mlp(&mut self, mut x: Var, names: &[&str]) -> Result<Var, NumError> {
        for (i, name) in names.iter().enumerate() {
            x = self.linear(x, name)?;
            if i + 1 < names.len() {
                x = self.tape.relu(x)?;
            }
        }
        Ok(x)
    }

    /// Repeats `x` (`[n, ...]`) `times` along a new leading axis.
    pub fn tile(&mut self, x: Var, times: usize) -> Result<Var, NumError> {
        let shape = self.shape(x);
        let len: usize = shape.iter().product();
        let idx: Rc<[usize]> = (0..times).flat_map(|_| 0..len).collect();
        let mut out = vec![times];
        out.extend_from_slice(&shape);
        self.tape.gather(x, idx, &out)
    }

    pub fn gradients(&self, root: Var) -> BTreeMap<String, Tensor> {
        self.params.collect(&self.tape.backward(root))
    }
}

/// Glorot weights and zero bias for `x W + b`.
pub fn init_linear(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<(), NumError> {
    store.init_glorot(&format!("{name}.w"), fan_in, fan_out)?;
    store.init_zeros(&format!("{name}.b"), &[fan_out])
}

/// All-zero layer; heads start at a known output.
pub fn init_linear_zero(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<(), NumError> {
    store.init_zeros(&format!("{name}.w"), &[fan_in, fan_out])?;
    store.init_zeros(&format!("{name}.b"), &[fan_out])
}

/// Gradient check of a session-based computation with respect to the named
/// parameters of `store` and the extra `inputs` (passed to `f` as variables).
/// At most `max_coords` coordinates are probed per tensor.
pub fn check_session_gradients<F>(
    store: &ParamStore,
    names: &[String],
    inputs: &[Tensor],
    tol: f64,
    max_coords: usize,
    f: F,
) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Session, &[Var]) -> Result<Var, NumError>,
{
    let mut point = Vec::with_capacity(names.len() + inputs.len());
    for n in names {
        point.push(store.get(n).ok_or_else(|| NumError::MissingParam(n.clone()))?.clone());
    }
    point.extend_from_slice(inputs);
    grad_check_sampled(
        |tape: &mut Tape, vars: &[Var]| {
            let mut s = Session {
                tape: std::mem::take(tape),
                params: Bindings::new(store),
            };
            for (n, v) in names.iter().zip(vars) {
                s.params.bind(n, *v);
            }
            let out = f(&mut s, &vars[names.len()..]);
            *tape = std::mem::take(&mut s.tape);
            out
        },
        &point,
        tol,
        max_coords,
    )
}
