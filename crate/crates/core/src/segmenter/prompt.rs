use crate::corpus::{LengthPolicy, Trajectory};

use super::ActionVocab;

const EXAMPLE_GOAL: &str = "turn on light on bureau top while holding clock.";
const EXAMPLE_ACTIONS: &str = "LookDown15, MoveAhead150, RotateLeft90, MoveAhead50, LookDown15, \
PickupObject AlarmClock, LookUp15, RotateLeft90, MoveAhead50, RotateRight90, MoveAhead75, \
RotateRight90, ToggleObjectOn DeskLamp";
const EXAMPLE_OUTPUT: &str = "{approach bureau (step 1): [LookDown15, MoveAhead150], \
approach bureau (step 2): [RotateLeft90, MoveAhead50, LookDown15], \
pick up clock: [PickupObject AlarmClock], \
move to desk lamp (step 1): [LookUp15, RotateLeft90, MoveAhead50], \
move to desk lamp (step 2): [RotateRight90, MoveAhead75, RotateRight90], \
turn on desk lamp: [ToggleObjectOn DeskLamp]}";

/// Sentence stating the per-skill length bounds.
pub fn bound_sentence(policy: LengthPolicy) -> String {
    format!(
        "The number of actions assigned to each skill should not exceed {} but should be at least {}.",
        policy.max_len, policy.min_len
    )
}

/// Segmentation prompt: instructions, one worked example, then the goal
/// and comma-joined action names. Observations are never included.
pub fn build_prompt(
    traj: &Trajectory,
    vocab: &ActionVocab,
    max_segments: usize,
    policy: LengthPolicy,
) -> String {
    let actions = traj
        .actions
        .iter()
        .map(|&a| vocab.name(a))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "You are watching an agent do tasks. For the following task and sequence of actions taken by the agent, \
segment the actions into no more than {max_segments} skills where each skill corresponds to one part of the action sequence. \
The answer should a python dictionary in the form of: {{(description of the first skill): (list of the actions that the agent took \
which correspond to the first skill), (description of the second skill): (list of the actions that the agent took which correspond \
to the second skill), etc.}}. {bounds} The segmentation should be as reasonable and fine-grained as possible. \
There should not be any leftover actions and should recover the given sequence of actions in the exact same order \
if we concatenate these actions in the order of the skills.\n\n\
Example 1:\n\n\
Input Goal: {EXAMPLE_GOAL}\n\
Input Actions: {EXAMPLE_ACTIONS}\n\n\
Output: {EXAMPLE_OUTPUT}\n\n\
Goal: {goal}\n\n\
Actions: {actions}\n",
        bounds = bound_sentence(policy),
        goal = traj.goal,
    )
}

/// Appends the validator's complaint so the next attempt can repair it.
pub fn with_feedback(prompt: &str, previous: &str, violation: &str) -> String {
    format!(
        "{prompt}\nYour previous answer was:\n{previous}\n\nIt was rejected because {violation}. \
Answer again following every rule above.\n"
    )
}

/// Rough token count (four characters per token).
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}
