use rand::Rng;

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }
    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully connected network over row-major batches.
///
/// Parameters live in one flat vector, layer by layer: the weight matrix
/// stored `[in][out]` followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Intermediate values of a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    batch: usize,
    /// Layer inputs `a_0 .. a_L`, where `a_L` is the network output.
    acts: Vec<Vec<f64>>,
    /// Pre-activations `z_1 .. z_L`.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
    pub fn into_output(mut self) -> Vec<f64> {
        self.acts.pop().unwrap_or_default()
    }
    /// Pre-activations of layer `l` (0-based), row-major.
    pub fn pre_activations(&self, l: usize) -> &[f64] {
        &self.pre[l]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl Mlp {
    /// Hidden layers use `hidden`, the last layer uses `output`. Weights and
    /// biases are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "bad layer sizes {sizes:?}");
        let layers = sizes.len() - 1;
        let activations = (0..layers)
            .map(|l| if l + 1 == layers { output } else { hidden })
            .collect();
        let mut params = Vec::with_capacity(Self::count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] + 1) * w[1] {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Self {
            sizes: sizes.to_vec(),
            activations,
            params,
        }
    }

    pub fn from_parts(sizes: Vec<usize>, activations: Vec<Activation>, params: Vec<f64>) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.contains(&0) || activations.len() + 1 != sizes.len() {
            return Err(NnError::Shape(format!("sizes {sizes:?} with {} activations", activations.len())));
        }
        if params.len() != Self::count(&sizes) {
            return Err(NnError::Shape(format!(
                "{} parameters for layer sizes {sizes:?}",
                params.len()
            )));
        }
        Ok(Self {
            sizes,
            activations,
            params,
        })
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }
    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }
    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }
    pub fn n_params(&self) -> usize {
        self.params.len()
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, x: &[f64], batch: usize) -> Result<(), NnError> {
        if x.len() != batch * self.input_dim() {
            return Err(NnError::Shape(format!(
                "input of length {} is not {batch} rows of {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping everything the backward pass needs.
    pub fn forward(&self, x: &[f64], batch: usize) -> Result<Tape, NnError> {
        self.check_input(x, batch)?;
        let mut tape = Tape {
            batch,
            acts: vec![x.to_vec()],
            pre: Vec::with_capacity(self.activations.len()),
        };
        let mut offset = 0;
        for (l, act) in self.activations.iter().enumerate() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            offset += (n_in + 1) * n_out;
            let mut z = b.repeat(batch);
            gemm(batch, n_in, n_out, tape.acts.last().unwrap(), false, w, false, &mut z, 1.0);
            let a = z.iter().map(|&v| act.apply(v)).collect();
            tape.pre.push(z);
            tape.acts.push(a);
        }
        Ok(tape)
    }

    pub fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>, NnError> {
        Ok(self.forward(x, batch)?.into_output())
    }

    /// Reverse pass for an upstream gradient `dout` on the output.
    pub fn backward(&self, tape: &Tape, dout: &[f64]) -> Result<Gradients, NnError> {
        if tape.batch == 0 || tape.pre.len() != self.activations.len() {
            return Err(NnError::EmptyTape);
        }
        let batch = tape.batch;
        if dout.len() != batch * self.output_dim() {
            return Err(NnError::Shape(format!(
                "output gradient of length {} for {batch} rows of {}",
                dout.len(),
                self.output_dim()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = dout.to_vec();
        let mut offset = self.params.len();
        for l in (0..self.activations.len()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= (n_in + 1) * n_out;
            let act = self.activations[l];
            for (d, &z) in delta.iter_mut().zip(&tape.pre[l]) {
                *d *= act.derivative(z);
            }
            let (gw, gb) = grads[offset..offset + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            gemm(n_in, batch, n_out, &tape.acts[l], true, &delta, false, gw, 0.0);
            for row in delta.chunks_exact(n_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let w = &self.params[offset..offset + n_in * n_out];
            let mut prev = vec![0.0; batch * n_in];
            gemm(batch, n_out, n_in, &delta, false, w, true, &mut prev, 0.0);
            delta = prev;
        }
        Ok(Gradients { params: grads, input: delta })
    }
}

/// `c = beta * c + op(a) * op(b)` for row-major `op(a): m x k`, `op(b): k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the m*k, k*n and m*n
    // row-major buffers whose lengths are checked by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
