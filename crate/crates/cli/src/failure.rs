use rallybot::dataset::DatasetError;
use rallybot::descriptors::DescriptorError;
use rallybot::hlc::HlcError;
use rallybot::matchsim::MatchError;
use rallybot::optimizer::OptimizerError;
use rallybot::skills::SkillError;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const DIVERGED: u8 = 3;

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        Self { code: USAGE, error: e.into() }
    }

    pub fn data(e: impl Into<anyhow::Error>) -> Self {
        Self { code: DATA, error: e.into() }
    }

    pub fn diverged(e: impl Into<anyhow::Error>) -> Self {
        Self { code: DIVERGED, error: e.into() }
    }

    pub fn msg(code: u8, msg: impl Into<String>) -> Self {
        Self { code, error: anyhow::anyhow!(msg.into()) }
    }

    pub fn context(self, c: impl std::fmt::Display + Send + Sync + 'static) -> Self {
        Self { code: self.code, error: self.error.context(c) }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::data(e)
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Self::data(e)
    }
}

impl From<DescriptorError> for Failure {
    fn from(e: DescriptorError) -> Self {
        Self::data(e)
    }
}

impl From<OptimizerError> for Failure {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Diverged { .. } => Self::diverged(e),
            OptimizerError::UnknownPreset(_) => Self::usage(e),
            _ => Self::data(e),
        }
    }
}

impl From<SkillError> for Failure {
    fn from(e: SkillError) -> Self {
        match e {
            SkillError::Diverged { .. } => Self::diverged(e),
            SkillError::Optimizer(o) => o.into(),
            _ => Self::data(e),
        }
    }
}

impl From<HlcError> for Failure {
    fn from(e: HlcError) -> Self {
        match e {
            HlcError::Diverged => Self::diverged(e),
            HlcError::Skill(s) => s.into(),
            HlcError::InvalidConfig(_) => Self::usage(e),
            _ => Self::data(e),
        }
    }
}

impl From<MatchError> for Failure {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::Stalled(_) => Self::diverged(e),
            MatchError::InvalidConfig(_) => Self::usage(e),
            MatchError::Hlc(h) => h.into(),
            MatchError::Skill(s) => s.into(),
            _ => Self::data(e),
        }
    }
}
