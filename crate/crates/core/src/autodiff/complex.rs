//! Complex tensors as pairs of real graph nodes.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Real and imaginary parts of a complex tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

impl Graph {
    pub fn complex_param(&mut self, re: Tensor, im: Tensor) -> CVar {
        CVar { re: self.param(re), im: self.param(im) }
    }

    pub fn complex_constant(&mut self, re: Tensor, im: Tensor) -> CVar {
        CVar { re: self.constant(re), im: self.constant(im) }
    }

    pub fn cadd(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar { re: self.add(a.re, b.re)?, im: self.add(a.im, b.im)? })
    }

    pub fn csub(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar { re: self.sub(a.re, b.re)?, im: self.sub(a.im, b.im)? })
    }

    /// Elementwise `a b`.
    pub fn cmul(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let rr = self.mul(a.re, b.re)?;
        let ii = self.mul(a.im, b.im)?;
        let ri = self.mul(a.re, b.im)?;
        let ir = self.mul(a.im, b.re)?;
        Ok(CVar { re: self.sub(rr, ii)?, im: self.add(ri, ir)? })
    }

    /// Elementwise `conj(a) b`.
    pub fn cconj_mul(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let rr = self.mul(a.re, b.re)?;
        let ii = self.mul(a.im, b.im)?;
        let ri = self.mul(a.re, b.im)?;
        let ir = self.mul(a.im, b.re)?;
        Ok(CVar { re: self.add(rr, ii)?, im: self.sub(ri, ir)? })
    }

    /// `A B` from four real products.
    pub fn cmatmul(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let rr = self.matmul(a.re, b.re)?;
        let ii = self.matmul(a.im, b.im)?;
        let ri = self.matmul(a.re, b.im)?;
        let ir = self.matmul(a.im, b.re)?;
        Ok(CVar { re: self.sub(rr, ii)?, im: self.add(ri, ir)? })
    }

    /// Elementwise `|a|²`.
    pub fn cabs2(&mut self, a: CVar) -> Result<Var> {
        let r = self.square(a.re);
        let i = self.square(a.im);
        self.add(r, i)
    }

    /// Elementwise `|a|`.
    pub fn cabs(&mut self, a: CVar) -> Result<Var> {
        self.hypot(a.re, a.im)
    }
}
