use bat_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

/// Which data components reach the model. `remove_*` drops one component,
/// `only_*` keeps one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    RemoveValues,
    RemoveMask,
    RemoveDemographics,
    OnlyValues,
    OnlyMask,
    OnlyDemographics,
}

impl AblationMode {
    pub const ALL: [AblationMode; 7] = [
        AblationMode::Full,
        AblationMode::RemoveValues,
        AblationMode::RemoveMask,
        AblationMode::RemoveDemographics,
        AblationMode::OnlyValues,
        AblationMode::OnlyMask,
        AblationMode::OnlyDemographics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::RemoveValues => "remove_values",
            AblationMode::RemoveMask => "remove_mask",
            AblationMode::RemoveDemographics => "remove_demographics",
            AblationMode::OnlyValues => "only_values",
            AblationMode::OnlyMask => "only_mask",
            AblationMode::OnlyDemographics => "only_demographics",
        }
    }

    /// `(values, mask, demographics)` kept by this mode.
    pub fn components(self) -> (bool, bool, bool) {
        match self {
            AblationMode::Full => (true, true, true),
            AblationMode::RemoveValues => (false, true, true),
            AblationMode::RemoveMask => (true, false, true),
            AblationMode::RemoveDemographics => (true, true, false),
            AblationMode::OnlyValues => (true, false, false),
            AblationMode::OnlyMask => (false, true, false),
            AblationMode::OnlyDemographics => (false, false, true),
        }
    }

    /// `base` with the dropped components switched off. Parameter shapes
    /// do not depend on the result.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let (use_values, use_mask, use_demographics) = self.components();
        ModelConfig { use_values, use_mask, use_demographics, ..base.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remove_drops_one_and_only_keeps_one() {
        for mode in AblationMode::ALL {
            let (v, m, d) = mode.components();
            let kept = [v, m, d].iter().filter(|&&k| k).count();
            let expected = match mode.as_str().split('_').next().unwrap() {
                "full" => 3,
                "remove" => 2,
                _ => 1,
            };
            assert_eq!(kept, expected, "{mode:?}");
        }
    }

    #[test]
    fn names_match_serde() {
        for mode in AblationMode::ALL {
            assert_eq!(serde_json::to_string(&mode).unwrap(), format!("\"{}\"", mode.as_str()));
        }
    }
}
