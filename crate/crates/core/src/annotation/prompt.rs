use crate::error::{Error, Result};
use crate::repository::Question;

pub const ROLE_SECTION: &str = "ROLE:";
pub const TASK_SECTION: &str = "TASK:";
pub const COMPARISON_SECTION: &str = "COMPARISON:";
pub const OUTPUT_SECTION: &str = "OUTPUT:";
pub const QUESTIONS_SECTION: &str = "QUESTIONS:";

// Original wording; only the four sections and their order are fixed.
const TEMPLATE_HEAD: &str = "\
ROLE: You are a cybersecurity audit classification expert who organizes third-party risk assessment questionnaires.

TASK: Identify semantic labels that are common to the whole cluster of questions below. Each label must name a control domain or assessment scope shared by the cluster, not a detail that belongs to a single question.

COMPARISON: Compare the questions with one another before answering. Keep only themes that recur across the questions and discard anything specific to one of them.

OUTPUT: Return a small set of short noun-phrase labels. Do not add explanations, numbering, or identifiers from any predefined taxonomy or standard. Respond with a JSON array of strings and nothing else.

QUESTIONS:
";

/// Cluster-level labeling prompt; a pure function of the question list.
pub fn build_cluster_prompt<'a, I>(questions: I) -> Result<String>
where
    I: IntoIterator<Item = &'a Question>,
{
    let mut prompt = String::from(TEMPLATE_HEAD);
    let mut count = 0;
    for (i, q) in questions.into_iter().enumerate() {
        prompt.push_str(&format!("{}. {}\n", i + 1, q.text));
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyCluster);
    }
    Ok(prompt)
}
