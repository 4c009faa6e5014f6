//! Four-block prompt template: instruction, scenario information, input
//! message and output instructions.
//!
//! Template files are plain text split into sections by `[[name]]` header
//! lines. The `input` section carries the `{{seed}}`, `{{feedback}}` and
//! `{{experience}}` placeholders.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::TemplateError;
use crate::llm::feedback::{ExpertExperience, FeedbackLedger};
use crate::scenario::{Scenario, ScenarioSpace};

pub const SEED_PLACEHOLDER: &str = "{{seed}}";
pub const FEEDBACK_PLACEHOLDER: &str = "{{feedback}}";
pub const EXPERIENCE_PLACEHOLDER: &str = "{{experience}}";
/// Tag in front of the seed's parameter list inside the input block.
pub const SEED_TAG: &str = "Seed Scenario:";

pub const WORKFLOW_STEPS: [&str; 5] =
    ["Scenario Analysis", "Evolution Prediction", "Challenge Analysis", "Plan Generation", "Plan Execution"];

pub const HEADER_ROLE: &str = "## Role";
pub const HEADER_INFO: &str = "## Scenario Information";
pub const HEADER_INPUT: &str = "## Input";
pub const HEADER_OUTPUT: &str = "## Output";

const DEFAULT_INPUT: &str = "### Seed Scenario\n{{seed}}\n### Testing Feedback\n{{feedback}}\n### Expert Experience\n{{experience}}";

const BUILTIN_COLLISION: &str = include_str!("../../templates/collision-avoidance-2d.txt");
const BUILTIN_COOP_NAV: &str = include_str!("../../templates/coop-nav.txt");

#[derive(Clone, Debug, PartialEq)]
pub struct PromptTemplate {
    pub role_assignment: String,
    pub task_introduction: String,
    pub overview: String,
    pub entity_information: String,
    pub state_description: String,
    pub constraints: Vec<String>,
    pub generation_workflow: Vec<String>,
    pub input_layout: String,
    pub output_format_marker: String,
}

fn section_lines(body: &str) -> Vec<String> {
    body.lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.strip_prefix("- ").unwrap_or(l).to_string())
        .collect()
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut t = PromptTemplate {
            role_assignment: String::new(),
            task_introduction: String::new(),
            overview: String::new(),
            entity_information: String::new(),
            state_description: String::new(),
            constraints: Vec::new(),
            generation_workflow: Vec::new(),
            input_layout: DEFAULT_INPUT.to_string(),
            output_format_marker: String::new(),
        };
        let mut sections: Vec<(String, String)> = Vec::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if let Some(name) = trimmed.strip_prefix("[[").and_then(|r| r.strip_suffix("]]")) {
                sections.push((name.trim().to_string(), String::new()));
                continue;
            }
            match sections.last_mut() {
                Some((_, body)) => {
                    body.push_str(line);
                    body.push('\n');
                }
                None if trimmed.is_empty() || trimmed.starts_with('#') => {}
                None => return Err(TemplateError::Preamble),
            }
        }
        for (name, body) in sections {
            let body_trim = body.trim().to_string();
            match name.as_str() {
                "role_assignment" => t.role_assignment = body_trim,
                "task_introduction" => t.task_introduction = body_trim,
                "overview" => t.overview = body_trim,
                "entity_information" => t.entity_information = body_trim,
                "state_description" => t.state_description = body_trim,
                "constraints" => t.constraints = section_lines(&body),
                "generation_workflow" => t.generation_workflow = section_lines(&body),
                "input" => t.input_layout = body_trim,
                "output_format_marker" => t.output_format_marker = body_trim,
                _ => return Err(TemplateError::UnknownSection(name)),
            }
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> std::io::Result<Result<Self, TemplateError>> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// Shipped template for a built-in environment.
    pub fn builtin(env_name: &str) -> Option<Self> {
        let text = match env_name {
            crate::env::COLLISION_AVOIDANCE => BUILTIN_COLLISION,
            crate::env::COOP_NAV => BUILTIN_COOP_NAV,
            _ => return None,
        };
        Some(Self::parse(text).expect("shipped templates parse"))
    }

    /// Checks that every block is filled in and that the state description
    /// documents exactly the space's dimensions.
    pub fn validate(&self, space: &ScenarioSpace) -> Result<(), TemplateError> {
        let blocks: [(&'static str, bool); 7] = [
            ("role_assignment", self.role_assignment.trim().is_empty()),
            ("task_introduction", self.task_introduction.trim().is_empty()),
            ("overview", self.overview.trim().is_empty()),
            ("entity_information", self.entity_information.trim().is_empty()),
            ("state_description", self.state_description.trim().is_empty()),
            ("constraints", self.constraints.is_empty()),
            ("output_format_marker", self.output_format_marker.trim().is_empty()),
        ];
        if let Some((name, _)) = blocks.iter().find(|(_, empty)| *empty) {
            return Err(TemplateError::EmptyBlock(name));
        }
        let described = self.state_description.lines().filter(|l| l.trim_start().starts_with("- ")).count();
        if described != space.dims() {
            return Err(TemplateError::DimensionMismatch { expected: space.dims(), found: described });
        }
        if let Some(missing) = space.dim_names().iter().find(|n| !self.state_description.contains(n.as_str())) {
            return Err(TemplateError::MissingDimension(missing.clone()));
        }
        for p in [SEED_PLACEHOLDER, FEEDBACK_PLACEHOLDER, EXPERIENCE_PLACEHOLDER] {
            if !self.input_layout.contains(p) {
                return Err(TemplateError::MissingPlaceholder(p));
            }
        }
        let mut steps = self.generation_workflow.iter();
        for step in WORKFLOW_STEPS {
            if !steps.any(|line| line.contains(step)) {
                return Err(TemplateError::MissingWorkflowStep(step));
            }
        }
        Ok(())
    }
}

/// Bracketed list with shortest round-trip decimal formatting.
pub fn format_params(params: &[f64]) -> String {
    let items: Vec<String> = params.iter().map(|v| format!("{v}")).collect();
    format!("[{}]", items.join(", "))
}

fn render_seed(space: &ScenarioSpace, seed: &Scenario) -> String {
    let mut out = format!("{SEED_TAG} {}", format_params(&seed.params));
    for (name, v) in space.dim_names().iter().zip(&seed.params) {
        let _ = write!(out, "\n- {name} = {v}");
    }
    out
}

fn render_feedback(ledger: &FeedbackLedger) -> String {
    if ledger.is_empty() {
        return "None".to_string();
    }
    ledger
        .iter()
        .map(|c| {
            format!(
                "- [{}] seed: {} -> new: {}; {}",
                c.category.tag(),
                format_params(&c.seed_params),
                c.new_params.as_deref().map_or_else(|| "unparsed".to_string(), format_params),
                c.detail
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_experience(experience: &ExpertExperience) -> String {
    if experience.plans.is_empty() {
        return "None".to_string();
    }
    experience.plans.iter().map(|p| format!("- {p}")).collect::<Vec<_>>().join("\n")
}

pub fn render_prompt(
    template: &PromptTemplate,
    space: &ScenarioSpace,
    seed: &Scenario,
    feedback: &FeedbackLedger,
    experience: &ExpertExperience,
) -> Result<String, TemplateError> {
    template.validate(space)?;
    if seed.params.len() != space.dims() {
        return Err(TemplateError::DimensionMismatch { expected: space.dims(), found: seed.params.len() });
    }
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER_ROLE}\n{}\n{}\n", template.role_assignment, template.task_introduction);
    let _ = writeln!(out, "{HEADER_INFO}");
    let _ = writeln!(out, "### Overview\n{}", template.overview);
    let _ = writeln!(out, "### Entity Information\n{}", template.entity_information);
    let _ = writeln!(out, "### State Description\n{}", template.state_description);
    let _ = writeln!(out, "### Constraints");
    for c in &template.constraints {
        let _ = writeln!(out, "- {c}");
    }
    let input = template
        .input_layout
        .replace(SEED_PLACEHOLDER, &render_seed(space, seed))
        .replace(FEEDBACK_PLACEHOLDER, &render_feedback(feedback))
        .replace(EXPERIENCE_PLACEHOLDER, &render_experience(experience));
    let _ = writeln!(out, "\n{HEADER_INPUT}\n{input}\n");
    let _ = writeln!(out, "{HEADER_OUTPUT}\nWork through the following steps in order:");
    for (i, step) in template.generation_workflow.iter().enumerate() {
        let _ = writeln!(out, "{}. {step}", i + 1);
    }
    let placeholder: Vec<&str> = space.dim_names().iter().map(String::as_str).collect();
    let _ = writeln!(
        out,
        "Then output the new scenario on a single line, in the same format as the seed scenario:\n{} [{}]",
        template.output_format_marker,
        placeholder.join(", ")
    );
    let _ = write!(out, "Finally, explain why the new scenario is more likely to make the policy fail.");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::feedback::{BadCase, BadCaseCategory};
    use crate::scenario::{Origin, ScenarioId};

    fn space() -> ScenarioSpace {
        ScenarioSpace::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec!["pos_x", "pos_y"]).unwrap()
    }

    fn template() -> PromptTemplate {
        PromptTemplate::parse(
            "[[role_assignment]]\nYou are a test scenario generator.\n\
             [[task_introduction]]\nMutate the scenario so the policy fails.\n\
             [[overview]]\nA point robot.\n\
             [[entity_information]]\nOne robot.\n\
             [[state_description]]\n- pos_x: x position in [-1, 1]\n- pos_y: y position in [-1, 1]\n\
             [[constraints]]\n- stay in bounds\n\
             [[generation_workflow]]\n\
             Scenario Analysis: describe the seed\n\
             Evolution Prediction: predict\n\
             Challenge Analysis: find weaknesses\n\
             Plan Generation: plan\n\
             Plan Execution: execute\n\
             [[output_format_marker]]\nNew Scenario:\n",
        )
        .unwrap()
    }

    fn seed() -> Scenario {
        Scenario::new(ScenarioId(3), vec![0.2, -0.5], None, Origin::InitialSample)
    }

    #[test]
    fn empty_inputs_render_none_and_headers_in_order() {
        let p = render_prompt(&template(), &space(), &seed(), &FeedbackLedger::new(5), &ExpertExperience::default())
            .unwrap();
        let idx: Vec<usize> = [HEADER_ROLE, HEADER_INFO, HEADER_INPUT, HEADER_OUTPUT]
            .iter()
            .map(|h| p.find(h).unwrap_or_else(|| panic!("missing {h}")))
            .collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(p.matches("None").count(), 2);
        for step in WORKFLOW_STEPS {
            assert!(p.contains(step));
        }
    }

    #[test]
    fn feedback_and_seed_values_are_included() {
        let mut ledger = FeedbackLedger::new(5);
        ledger.push(BadCase {
            seed_params: vec![0.1, 0.1],
            new_params: Some(vec![0.2, 0.2]),
            category: BadCaseCategory::InsufficientChallenge,
            detail: "reward change +15 exceeds 10".to_string(),
        });
        let exp = ExpertExperience { plans: vec!["move the robot to a corner".to_string()] };
        let p = render_prompt(&template(), &space(), &seed(), &ledger, &exp).unwrap();
        assert!(p.contains("[insufficient_challenge]"));
        assert!(p.contains("+15"));
        assert!(p.contains("- move the robot to a corner"));
        let input = &p[p.find(HEADER_INPUT).unwrap()..p.find(HEADER_OUTPUT).unwrap()];
        assert!(input.contains("Seed Scenario: [0.2, -0.5]"));
        assert!(input.contains("pos_x = 0.2"));
        assert!(input.contains("pos_y = -0.5"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_prompt(&template(), &space(), &seed(), &FeedbackLedger::new(5), &ExpertExperience::default());
        let b = render_prompt(&template(), &space(), &seed(), &FeedbackLedger::new(5), &ExpertExperience::default());
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s3 = ScenarioSpace::new(vec![0.0; 3], vec![1.0; 3], vec!["pos_x", "pos_y", "pos_z"]).unwrap();
        assert!(matches!(template().validate(&s3), Err(TemplateError::DimensionMismatch { expected: 3, found: 2 })));
        let renamed = ScenarioSpace::new(vec![0.0; 2], vec![1.0; 2], vec!["pos_x", "speed"]).unwrap();
        assert_eq!(template().validate(&renamed), Err(TemplateError::MissingDimension("speed".into())));
    }

    #[test]
    fn incomplete_templates_are_rejected() {
        let mut t = template();
        t.overview.clear();
        assert_eq!(t.validate(&space()), Err(TemplateError::EmptyBlock("overview")));
        let mut t = template();
        t.generation_workflow.remove(2);
        assert_eq!(t.validate(&space()), Err(TemplateError::MissingWorkflowStep("Challenge Analysis")));
        let mut t = template();
        t.input_layout = "{{seed}} {{feedback}}".into();
        assert_eq!(t.validate(&space()), Err(TemplateError::MissingPlaceholder(EXPERIENCE_PLACEHOLDER)));
        assert_eq!(PromptTemplate::parse("[[bogus]]\nx"), Err(TemplateError::UnknownSection("bogus".into())));
        assert_eq!(PromptTemplate::parse("stray text\n[[overview]]\nx"), Err(TemplateError::Preamble));
    }

    #[test]
    fn builtin_templates_match_their_environments() {
        let reg = crate::env::EnvRegistry::with_builtins();
        for name in [crate::env::COLLISION_AVOIDANCE, crate::env::COOP_NAV] {
            let env = reg.create(name).unwrap();
            PromptTemplate::builtin(name).unwrap().validate(env.space()).unwrap();
        }
        assert!(PromptTemplate::builtin("unknown").is_none());
    }
}
