/// Lipschitz constant used for the tanh-approximated GELU. The exact
/// supremum of its derivative is about 1.12899.
pub const GELU_LIPSCHITZ: f64 = 1.13;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    GeluApprox,
}

impl Activation {
    pub const ALL: [Activation; 4] =
        [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::GeluApprox];

    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Identity => u,
            Activation::Relu => u.max(0.0),
            Activation::Tanh => libm::tanh(u),
            Activation::GeluApprox => 0.5 * u * (1.0 + libm::tanh(GELU_C * (u + GELU_A * u * u * u))),
        }
    }

    /// First derivative; relu uses 0 at the kink.
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(u);
                1.0 - t * t
            }
            Activation::GeluApprox => {
                let t = libm::tanh(GELU_C * (u + GELU_A * u * u * u));
                let du = GELU_C * (1.0 + 3.0 * GELU_A * u * u);
                0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * du
            }
        }
    }

    pub fn second_derivative(self, u: f64) -> f64 {
        match self {
            Activation::Identity | Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = libm::tanh(u);
                -2.0 * t * (1.0 - t * t)
            }
            Activation::GeluApprox => {
                let t = libm::tanh(GELU_C * (u + GELU_A * u * u * u));
                let sech2 = 1.0 - t * t;
                let du = GELU_C * (1.0 + 3.0 * GELU_A * u * u);
                let ddu = 6.0 * GELU_C * GELU_A * u;
                sech2 * du + 0.5 * u * sech2 * (ddu - 2.0 * t * du * du)
            }
        }
    }

    pub fn lipschitz_constant(self) -> f64 {
        match self {
            Activation::Identity | Activation::Relu | Activation::Tanh => 1.0,
            Activation::GeluApprox => GELU_LIPSCHITZ,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::GeluApprox => "gelu-approx",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }
}
