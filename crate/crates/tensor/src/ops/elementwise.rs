use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        let axis = a
            .shape()
            .iter()
            .zip(b.shape())
            .position(|(x, y)| x != y)
            .map(|i| format!("axis {i}"))
            .unwrap_or_else(|| "rank".to_string());
        return Err(TensorError::dim(
            op,
            axis,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Tensor::from_op(
            "add",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|_, g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Tensor::from_op(
            "sub",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|_, g| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]),
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            "mul",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                let ga = g.iter().zip(b.data()).map(|(&g, &b)| g * b).collect();
                let gb = g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("div", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a / b).collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            "div",
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                let ga = g.iter().zip(b.data()).map(|(&g, &b)| g / b).collect();
                let gb = g
                    .iter()
                    .zip(a.data().iter().zip(b.data()))
                    .map(|(&g, (&a, &b))| -g * a / (b * b))
                    .collect();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn add_scalar(&self, s: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&a| a + s).collect();
        Tensor::from_op(
            "add_scalar",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|_, g| vec![Some(g.to_vec())]),
        )
    }

    pub fn mul_scalar(&self, s: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&a| a * s).collect();
        Tensor::from_op(
            "mul_scalar",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(g.iter().map(|&v| v * s).collect())]),
        )
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.mul_scalar(-T::one())
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&a| a * a).collect();
        let x = self.clone();
        Tensor::from_op(
            "square",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                let two = T::from_f64(2.0);
                vec![Some(g.iter().zip(x.data()).map(|(&g, &x)| two * x * g).collect())]
            }),
        )
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&a| a.exp()).collect();
        Tensor::from_op(
            "exp",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|out, g| vec![Some(g.iter().zip(out).map(|(&g, &y)| g * y).collect())]),
        )
    }

    /// Natural logarithm.
    pub fn ln(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&a| a.ln()).collect();
        let x = self.clone();
        Tensor::from_op(
            "ln",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(g.iter().zip(x.data()).map(|(&g, &x)| g / x).collect())]),
        )
    }
}
