use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed input: bad CSV, bad config, unreadable file.
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Engine(#[from] gsfica::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Engine(e) if e.is_input_error() => 2,
            CliError::Engine(_) => 3,
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::Engine(gsfica::Error::DegeneratePairing {
            row,
            nonlinearity,
            source_name,
            alpha,
        }) = self
        {
            v["row"] = json!(row);
            v["nonlinearity"] = json!(nonlinearity);
            v["source"] = json!(source_name);
            v["alpha"] = json!(alpha);
        }
        v
    }

    fn kind(&self) -> &'static str {
        use gsfica::Error as E;
        match self {
            CliError::Input(_) => "input",
            CliError::Engine(e) => match e {
                E::InvalidSpec(_) => "invalid_spec",
                E::Numeric(_) => "numeric",
                E::IllConditioned { .. } => "ill_conditioned",
                E::NotSymmetric { .. } => "not_symmetric",
                E::InsufficientSamples { .. } => "insufficient_samples",
                E::Dimension(_) => "dimension",
                E::DegenerateUpdate(_) => "degenerate_update",
                E::DegeneratePairing { .. } => "degenerate_pairing",
                E::UnsupportedNonlinearity(_) => "unsupported_nonlinearity",
                E::UnsupportedDimension(_) => "unsupported_dimension",
                E::NonIdentifiable(_) => "non_identifiable",
                E::ExperimentInvalid { .. } => "experiment_invalid",
                E::Config(_) => "config",
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn input<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Input(format!("{context}: {e}"))
}
