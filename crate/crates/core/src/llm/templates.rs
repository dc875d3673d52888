//! Prompt templates. Each prompt has a data segment followed by a directive
//! segment and an output-format instruction.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{Prompt, PromptKind, Section};
use crate::analyzer::{CallSiteContext, FunctionSpan};
use crate::diff::serialize_file_diff;
use crate::model::{CommitRef, FileDiff, LinkedText};

/// Stamped into every prompt header and prompt log entry.
pub const TEMPLATE_VERSION: &str = "cs-prompts-3";

const JSON_YES_NO: &str = "Answer with one JSON object and nothing else:\n\
{\"result\": \"yes\" or \"no\", \"analysis\": \"<short justification>\"}";

const FIX_DEFINITION: &str = "A vulnerability fix is a commit that removes a security weakness from the code, \
for example by adding a missing bounds or length check, correcting an off-by-one index, initializing memory \
before use, fixing reference counting or object lifetime, validating untrusted input, or closing a race. \
Commits that only refactor, rename, reformat, add features, update documentation or tests, or fix \
non-security bugs are not vulnerability fixes.";

const INTRO_DEFINITION: &str = "A vulnerability-introducing commit is a historical commit whose change created \
the weakness that a later fix removes: it added the faulty code, removed a check that the fix restores, or \
changed how the affected variables are set or used so that the unsafe state became reachable.";

fn linked(items: &[LinkedText]) -> String {
    let mut out = String::new();
    for i in items {
        let _ = writeln!(out, "#{} {}\n{}\n", i.number, i.title, i.body);
    }
    out.trim_end().to_string()
}

fn patch_text(f: &FileDiff) -> String {
    if f.binary {
        format!("{} (binary file)", f.path())
    } else if f.hunks.is_empty() {
        format!("{} (no textual changes)", f.path())
    } else {
        serialize_file_diff(f)
    }
}

fn functions_text(fs: &[FunctionSpan]) -> String {
    let mut out = String::new();
    for f in fs {
        let _ = writeln!(out, "// {} ({}:{}-{})\n{}\n", f.name, f.file, f.start_line, f.end_line, f.body_text);
    }
    out.trim_end().to_string()
}

fn call_contexts_text(cs: &[CallSiteContext]) -> String {
    let mut out = String::new();
    for c in cs {
        let caller = c.caller.as_ref().map_or("file scope", |f| f.name.as_str());
        let _ = writeln!(out, "// call to {} at {}:{} in {}\n{}\n", c.callee, c.file, c.line, caller, c.context_lines.join("\n"));
    }
    out.trim_end().to_string()
}

fn push_if(sections: &mut Vec<Section>, label: &str, priority: u8, text: String) {
    if !text.trim().is_empty() {
        sections.push(Section::new(label, priority, text));
    }
}

pub fn build_describe_prompt(commit: &CommitRef, base_msg: &str, issues: &[LinkedText], prs: &[LinkedText], comments: &[String]) -> Prompt {
    let msg = if base_msg.trim().is_empty() { "<no message>" } else { base_msg };
    let mut s = vec![Section::new("commit message", 0, msg)];
    push_if(&mut s, "linked issues", 2, linked(issues));
    push_if(&mut s, "linked pull requests", 2, linked(prs));
    push_if(&mut s, "commit comments", 3, comments.join("\n---\n"));
    let task = if s.len() == 1 {
        "The commit message above is the only information available. Expand upon it and generate a more precise and \
detailed description of what the commit changes and why, including any security impact it suggests."
    } else {
        "Using the commit message together with the linked issues, pull requests and comments, generate a more precise \
and detailed description of what the commit changes and why. Name the affected component, the problem being \
addressed and any security impact (for example memory corruption, information disclosure, denial of service)."
    };
    s.push(Section::new("task", 0, format!("{task}\nRespond with the description as plain text.")));
    Prompt::new(PromptKind::Describe, commit.sha.clone(), s)
}

pub fn build_relevance_prompt(commit: &CommitRef, description: &str, diff: &FileDiff) -> Prompt {
    let s = vec![
        Section::new("commit description", 1, description),
        Section::new("patch", 2, patch_text(diff)),
        Section::new(
            "task",
            0,
            "Decide whether this patch implements the change described above, or whether it is unrelated noise \
(formatting, version bumps, unrelated refactoring, tests or documentation). Answer \"yes\" if the patch is related to \
the description.",
        ),
        Section::new("output format", 0, JSON_YES_NO),
    ];
    Prompt::new(PromptKind::Relevance, format!("{}:{}", commit.sha, diff.path()), s)
}

pub fn build_scope_prompt(commit: &CommitRef, diff: &FileDiff, functions: &[FunctionSpan]) -> Prompt {
    let s = vec![
        Section::new("patch", 1, patch_text(diff)),
        Section::new("enclosing functions", 2, functions_text(functions)),
        Section::new(
            "task",
            0,
            "Determine the role of the patch within the functions listed above. If its effect is confined to those \
functions (local checks, local variables, control flow that does not change what callers observe) it is \
intra-procedural. If it changes return values, parameters, shared state, struct fields or anything callers rely \
on, its impact may propagate to other functions and it is inter-procedural.",
        ),
        Section::new(
            "output format",
            0,
            "Answer with one JSON object and nothing else:\n{\"result\": \"intra\" or \"inter\", \"analysis\": \"<short justification>\"}",
        ),
    ];
    Prompt::new(PromptKind::Scope, format!("{}:{}", commit.sha, diff.path()), s)
}

pub fn build_vfd_prompt(
    commit: &CommitRef,
    description: &str,
    kept_patches: &[FileDiff],
    intra_functions: &[FunctionSpan],
    call_contexts: &[CallSiteContext],
) -> Prompt {
    let patches: Vec<String> = kept_patches.iter().map(patch_text).collect();
    let mut s = vec![Section::new("commit description", 0, description), Section::new("patches", 1, patches.join("\n"))];
    push_if(&mut s, "function bodies", 2, functions_text(intra_functions));
    push_if(&mut s, "call-site contexts", 3, call_contexts_text(call_contexts));
    s.push(Section::new("definition", 0, FIX_DEFINITION));
    s.push(Section::new(
        "task",
        0,
        "Using the description, the patches and the surrounding code above, decide whether this commit is a \
vulnerability fix. Answer \"yes\" only if the change removes or mitigates a security weakness.",
    ));
    s.push(Section::new("output format", 0, JSON_YES_NO));
    Prompt::new(PromptKind::VfdFinal, commit.sha.clone(), s)
}

/// Fix-side material shown next to every historical candidate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VidEvidence {
    pub description: String,
    /// Lines the fix deleted and added.
    pub change_lines: String,
    /// Fix hunks widened by the context-extension policy.
    pub extended_context: String,
}

pub fn build_vid_prompt(candidate: &CommitRef, fix: &VidEvidence, historical_patch_extended: &str) -> Prompt {
    let mut s = Vec::new();
    push_if(&mut s, "fix description", 1, fix.description.clone());
    s.push(Section::new("fix change lines", 1, fix.change_lines.clone()));
    push_if(&mut s, "fix context", 2, fix.extended_context.clone());
    s.push(Section::new("historical patch", 1, historical_patch_extended));
    s.push(Section::new("definition", 0, INTRO_DEFINITION));
    s.push(Section::new(
        "task",
        0,
        "Compare the historical patch with the fix. Decide whether the historical commit introduced the \
vulnerability that the fix removes, for example by adding the code the fix deletes or corrects, or by removing \
a check the fix adds back. Answer \"yes\" if it is the vulnerability-introducing commit.",
    ));
    s.push(Section::new("output format", 0, JSON_YES_NO));
    Prompt::new(PromptKind::VidJudge, candidate.sha.clone(), s)
}
