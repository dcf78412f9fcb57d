//! Complex ratio masks: the ideal (oracle) mask and the three ways of
//! applying an estimated mask to a noisy spectrum.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::layers::CVar;
use crate::tensor::{complex_elementwise_mul, ComplexTensor, Real, Tensor};

/// Denominator floor of the oracle mask.
pub const CRM_EPS: f64 = 1e-8;

/// Keeps the mask magnitude differentiable at zero.
const MAG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum MaskMode {
    /// Complex multiplication `X·M`.
    #[default]
    Crm,
    /// Magnitude `|X|·tanh|M|`, phase `∠X + ∠M`.
    Polar,
    /// Plane-wise `X_r·M_r + j·X_i·M_i`.
    Real,
}

impl MaskMode {
    pub const ALL: [MaskMode; 3] = [MaskMode::Crm, MaskMode::Polar, MaskMode::Real];

    pub fn code(self) -> u8 {
        match self {
            MaskMode::Crm => 0,
            MaskMode::Polar => 1,
            MaskMode::Real => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.code() == c)
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Crm => "crm",
            MaskMode::Polar => "polar",
            MaskMode::Real => "real",
        })
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crm" => Ok(MaskMode::Crm),
            "polar" => Ok(MaskMode::Polar),
            "real" => Ok(MaskMode::Real),
            other => Err(Error::Config(format!(
                "unknown mask mode {other:?} (expected crm, polar or real)"
            ))),
        }
    }
}

/// Decoder output `M_r + jM_i` tagged with how it is to be applied.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskEstimate<T> {
    pub m_r: Tensor<T>,
    pub m_i: Tensor<T>,
    pub mode: MaskMode,
}

impl<T: Real> MaskEstimate<T> {
    pub fn new(m_r: Tensor<T>, m_i: Tensor<T>, mode: MaskMode) -> Result<Self> {
        m_r.check_same_shape(&m_i, "mask planes")?;
        Ok(MaskEstimate { m_r, m_i, mode })
    }

    /// `1 + 0j` everywhere.
    pub fn identity(shape: &[usize], mode: MaskMode) -> Self {
        MaskEstimate {
            m_r: Tensor::ones(shape),
            m_i: if mode == MaskMode::Real {
                Tensor::ones(shape)
            } else {
                Tensor::zeros(shape)
            },
            mode,
        }
    }

    fn expect(&self, mode: MaskMode, x: &ComplexTensor<T>) -> Result<()> {
        if self.mode != mode {
            return Err(Error::Contract(format!(
                "{} mask passed to {mode} application",
                self.mode
            )));
        }
        if self.m_r.shape() != x.shape() {
            return Err(Error::dims("mask vs spectrum", self.m_r.shape(), x.shape()));
        }
        Ok(())
    }

    fn as_complex(&self) -> ComplexTensor<T> {
        ComplexTensor {
            re: self.m_r.clone(),
            im: self.m_i.clone(),
        }
    }
}

/// Ideal complex ratio mask `Y / X`, denominator floored at [`CRM_EPS`].
pub fn oracle_crm<T: Real>(x: &ComplexTensor<T>, y: &ComplexTensor<T>) -> Result<MaskEstimate<T>> {
    x.re.check_same_shape(&y.re, "oracle_crm")?;
    let eps = T::from_f64_lossy(CRM_EPS);
    let n = x.len();
    let (mut m_r, mut m_i) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let (xr, xi) = (x.re.data()[k], x.im.data()[k]);
        let (yr, yi) = (y.re.data()[k], y.im.data()[k]);
        let den = (xr * xr + xi * xi).max(eps);
        m_r.push((xr * yr + xi * yi) / den);
        m_i.push((xr * yi - xi * yr) / den);
    }
    MaskEstimate::new(
        Tensor::from_vec(x.shape(), m_r)?,
        Tensor::from_vec(x.shape(), m_i)?,
        MaskMode::Crm,
    )
}

pub fn apply_mask_crm<T: Real>(x: &ComplexTensor<T>, m: &MaskEstimate<T>) -> Result<ComplexTensor<T>> {
    m.expect(MaskMode::Crm, x)?;
    complex_elementwise_mul(x, &m.as_complex())
}

/// Scales magnitudes by `mag` and rotates phases by `phase`.
pub fn apply_polar<T: Real>(x: &ComplexTensor<T>, mag: &Tensor<T>, phase: &Tensor<T>) -> Result<ComplexTensor<T>> {
    mag.check_same_shape(&x.re, "polar magnitude")?;
    phase.check_same_shape(&x.re, "polar phase")?;
    let rot = ComplexTensor {
        re: mag.zip_map(phase, |m, p| m * p.cos())?,
        im: mag.zip_map(phase, |m, p| m * p.sin())?,
    };
    complex_elementwise_mul(x, &rot)
}

/// Magnitude `tanh(√(M_r² + M_i²))` and phase `atan2(M_i, M_r)`.
pub fn polar_components<T: Real>(m: &MaskEstimate<T>) -> (Tensor<T>, Tensor<T>) {
    let mag = m.m_r.zip_map(&m.m_i, |r, i| (r * r + i * i).sqrt().tanh()).unwrap();
    let phase = m.m_r.zip_map(&m.m_i, |r, i| i.atan2(r)).unwrap();
    (mag, phase)
}

pub fn apply_mask_polar<T: Real>(x: &ComplexTensor<T>, m: &MaskEstimate<T>) -> Result<ComplexTensor<T>> {
    m.expect(MaskMode::Polar, x)?;
    let (mag, phase) = polar_components(m);
    apply_polar(x, &mag, &phase)
}

pub fn apply_mask_real<T: Real>(x: &ComplexTensor<T>, m: &MaskEstimate<T>) -> Result<ComplexTensor<T>> {
    m.expect(MaskMode::Real, x)?;
    Ok(ComplexTensor {
        re: x.re.zip_map(&m.m_r, |a, b| a * b)?,
        im: x.im.zip_map(&m.m_i, |a, b| a * b)?,
    })
}

/// Applies `m` according to its own mode.
pub fn apply_mask<T: Real>(x: &ComplexTensor<T>, m: &MaskEstimate<T>) -> Result<ComplexTensor<T>> {
    match m.mode {
        MaskMode::Crm => apply_mask_crm(x, m),
        MaskMode::Polar => apply_mask_polar(x, m),
        MaskMode::Real => apply_mask_real(x, m),
    }
}

/// Differentiable mask application on equally shaped planes.
///
/// The polar form is written without angles: with `|M|` the mask
/// magnitude, `tanh|M|·e^{j∠M} = (tanh|M| / |M|)·M`.
pub fn apply_mask_tape<T: Real>(tape: &mut Tape<T>, x: CVar, m: CVar, mode: MaskMode) -> CVar {
    match mode {
        MaskMode::Crm => complex_mul(tape, x, m),
        MaskMode::Polar => {
            let r2 = tape.square(m.re);
            let i2 = tape.square(m.im);
            let s = tape.add(r2, i2);
            let s = tape.add_scalar(s, T::from_f64_lossy(MAG_EPS));
            let mag = tape.sqrt(s);
            let bounded = tape.tanh(mag);
            let gain = tape.div(bounded, mag);
            let xm = complex_mul(tape, x, m);
            CVar {
                re: tape.mul(xm.re, gain),
                im: tape.mul(xm.im, gain),
            }
        }
        MaskMode::Real => CVar {
            re: tape.mul(x.re, m.re),
            im: tape.mul(x.im, m.im),
        },
    }
}

fn complex_mul<T: Real>(tape: &mut Tape<T>, x: CVar, m: CVar) -> CVar {
    let rr = tape.mul(x.re, m.re);
    let ii = tape.mul(x.im, m.im);
    let ri = tape.mul(x.re, m.im);
    let ir = tape.mul(x.im, m.re);
    CVar {
        re: tape.sub(rr, ii),
        im: tape.add(ri, ir),
    }
}
