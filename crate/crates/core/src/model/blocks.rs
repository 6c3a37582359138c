//! Residual building blocks of the U-Net.

use crate::error::Result;
use crate::nn::{
    AvgPool2x2, BatchNorm2d, Conv2d, ConvTranspose2d, Layer, Mode, Param, Real, Relu, Tensor,
};

/// Residual convolutional block: two conv-BN-ReLU stages plus a shortcut
/// (identity, or a 1x1 conv when the channel count changes).
#[derive(Debug, Clone)]
pub struct Rcb<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu1: Relu<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    relu2: Relu<T>,
    shortcut: Option<Conv2d<T>>,
}

impl<T: Real> Rcb<T> {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), cout),
            relu1: Relu::new(),
            conv2: Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), cout),
            relu2: Relu::new(),
            shortcut: (cin != cout)
                .then(|| Conv2d::new(&format!("{name}.shortcut"), cin, cout, 1, rng)),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels()
    }
}

impl<T: Real> Layer<T> for Rcb<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let a = self.conv1.forward(x, mode)?;
        let a = self.bn1.forward(&a, mode)?;
        let a = self.relu1.forward(&a, mode)?;
        let a = self.conv2.forward(&a, mode)?;
        let a = self.bn2.forward(&a, mode)?;
        let mut out = self.relu2.forward(&a, mode)?;
        match &mut self.shortcut {
            Some(s) => out.add_assign(&s.forward(x, mode)?)?,
            None => out.add_assign(x)?,
        }
        Ok(out)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.conv1.infer(x)?;
        let a = self.bn1.infer(&a)?;
        let a = self.relu1.infer(&a)?;
        let a = self.conv2.infer(&a)?;
        let a = self.bn2.infer(&a)?;
        let mut out = self.relu2.infer(&a)?;
        match &self.shortcut {
            Some(s) => out.add_assign(&s.infer(x)?)?,
            None => out.add_assign(x)?,
        }
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.relu2.backward(grad_out)?;
        let g = self.bn2.backward(&g)?;
        let g = self.conv2.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        let g = self.bn1.backward(&g)?;
        let mut gx = self.conv1.backward(&g)?;
        match &mut self.shortcut {
            Some(s) => gx.add_assign(&s.backward(grad_out)?)?,
            None => gx.add_assign(grad_out)?,
        }
        Ok(gx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.conv1.params();
        p.extend(self.bn1.params());
        p.extend(self.conv2.params());
        p.extend(self.bn2.params());
        if let Some(s) = &self.shortcut {
            p.extend(s.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.conv1.params_mut();
        p.extend(self.bn1.params_mut());
        p.extend(self.conv2.params_mut());
        p.extend(self.bn2.params_mut());
        if let Some(s) = &mut self.shortcut {
            p.extend(s.params_mut());
        }
        p
    }
}

/// A chain of RCBs; the first may change the channel count. An
/// intermediate block (ICB) is exactly this.
#[derive(Debug, Clone)]
pub struct RcbStack<T> {
    blocks: Vec<Rcb<T>>,
}

impl<T: Real> RcbStack<T> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        count: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let blocks = (0..count)
            .map(|i| {
                Rcb::new(
                    &format!("{name}.rcb{i}"),
                    if i == 0 { cin } else { cout },
                    cout,
                    rng,
                )
            })
            .collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Rcb<T>] {
        &self.blocks
    }
}

impl<T: Real> Layer<T> for RcbStack<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.infer(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.blocks.iter().flat_map(|b| b.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.params_mut())
            .collect()
    }
}

pub type Icb<T> = RcbStack<T>;

/// Residual encoder block: an RCB stack followed by 2x2 average pooling.
/// Returns both the pooled output and the pre-pool feature for the skip path.
#[derive(Debug, Clone)]
pub struct Reb<T> {
    stack: RcbStack<T>,
    pool: AvgPool2x2,
}

impl<T: Real> Reb<T> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        count: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        Self {
            stack: RcbStack::new(name, cin, cout, count, rng),
            pool: AvgPool2x2::new(),
        }
    }

    /// `(pooled, pre_pool)`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Tensor<T>)> {
        let pre = self.stack.forward(x, mode)?;
        let pooled = Layer::<T>::forward(&mut self.pool, &pre, mode)?;
        Ok((pooled, pre))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let pre = self.stack.infer(x)?;
        let pooled = Layer::<T>::infer(&self.pool, &pre)?;
        Ok((pooled, pre))
    }

    /// Takes gradients for both outputs; returns the input gradient.
    pub fn backward(&mut self, grad_pooled: &Tensor<T>, grad_pre: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Layer::<T>::backward(&mut self.pool, grad_pooled)?;
        g.add_assign(grad_pre)?;
        self.stack.backward(&g)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.stack.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.stack.params_mut()
    }
}

/// Residual decoder block: 2x transposed-conv upsampling, channel concat
/// with the skip feature, then an RCB stack back to `cout` channels.
#[derive(Debug, Clone)]
pub struct Rdb<T> {
    up: ConvTranspose2d<T>,
    stack: RcbStack<T>,
}

impl<T: Real> Rdb<T> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        count: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        Self {
            up: ConvTranspose2d::new(&format!("{name}.up"), cin, cout, rng),
            stack: RcbStack::new(name, 2 * cout, cout, count, rng),
        }
    }

    fn up_channels(&self) -> usize {
        self.up.out_channels()
    }

    pub fn forward(&mut self, x: &Tensor<T>, skip: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let u = self.up.forward(x, mode)?;
        self.stack
            .forward(&Tensor::concat_channels(&u, skip)?, mode)
    }

    pub fn infer(&self, x: &Tensor<T>, skip: &Tensor<T>) -> Result<Tensor<T>> {
        let u = self.up.infer(x)?;
        self.stack.infer(&Tensor::concat_channels(&u, skip)?)
    }

    /// Returns `(grad_x, grad_skip)`.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let g = self.stack.backward(grad_out)?;
        let (gu, gs) = g.split_channels(self.up_channels())?;
        Ok((self.up.backward(&gu)?, gs))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.up.params();
        p.extend(self.stack.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.up.params_mut();
        p.extend(self.stack.params_mut());
        p
    }
}
