//! Terminal interaction: clarification questions and per-turn feedback over
//! line-oriented input. End of input means "skip" from then on.

use std::io::{BufRead, Write};
use std::sync::Mutex;

use async_trait::async_trait;

use t2i_agents::evaluator::Decision;
use t2i_agents::{
    AmbiguousElement, ClarificationAnswer, EvaluationResult, Feedback, InteractionHandler, Reply, SessionId, Turn,
    Verdict,
};

struct Io<R, W> {
    input: R,
    output: W,
    eof: bool,
}

impl<R: BufRead, W: Write> Io<R, W> {
    /// Next trimmed line, or `None` at end of input.
    fn read_line(&mut self) -> Option<String> {
        if self.eof {
            return None;
        }
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => {
                self.eof = true;
                None
            }
            Ok(_) => Some(line.trim().to_string()),
        }
    }

    fn say(&mut self, text: impl AsRef<str>) {
        let _ = writeln!(self.output, "{}", text.as_ref());
        let _ = self.output.flush();
    }

    fn prompt(&mut self, text: &str) {
        let _ = write!(self.output, "{text}");
        let _ = self.output.flush();
    }
}

pub struct ConsoleHandler<R, W> {
    io: Mutex<Io<R, W>>,
}

impl<R: BufRead + Send, W: Write + Send> ConsoleHandler<R, W> {
    pub fn new(input: R, output: W) -> Self {
        ConsoleHandler {
            io: Mutex::new(Io {
                input,
                output,
                eof: false,
            }),
        }
    }

    pub fn into_output(self) -> W {
        self.io.into_inner().unwrap().output
    }
}

/// Interpret one feedback line.
pub fn parse_feedback(line: &str) -> Feedback {
    let t = line.trim();
    match t.to_lowercase().as_str() {
        "" => Feedback::default(),
        "a" | "accept" => Feedback {
            accept: true,
            ..Feedback::default()
        },
        "r" | "regenerate" => Feedback {
            regenerate: true,
            ..Feedback::default()
        },
        _ => Feedback {
            text: Some(t.to_string()),
            ..Feedback::default()
        },
    }
}

pub fn format_scores(eval: &EvaluationResult) -> String {
    let mut out = String::new();
    for (name, v) in EvaluationResult::SUB_SCORE_NAMES.iter().zip(eval.sub_scores()) {
        out.push_str(&format!("  {name:<26}{v:>5.1}\n"));
    }
    out.push_str(&format!("  {:<26}{:>5.2}", "overall", eval.overall));
    out
}

#[async_trait]
impl<R: BufRead + Send, W: Write + Send> InteractionHandler for ConsoleHandler<R, W> {
    async fn ask_clarifications(
        &self,
        _session: &SessionId,
        pending: &[AmbiguousElement],
    ) -> Reply<Vec<ClarificationAnswer>> {
        let mut io = self.io.lock().unwrap();
        let mut answers = Vec::new();
        io.say("Some parts of the prompt are ambiguous. Press Enter to let the model decide.");
        for a in pending {
            io.say(format!("\n[{}] {}", a.element, a.reason));
            for q in &a.clarification_questions {
                io.say(format!("  - {q}"));
            }
            io.prompt("> ");
            match io.read_line() {
                Some(line) if !line.is_empty() => answers.push(ClarificationAnswer {
                    element: a.element.clone(),
                    answer: line,
                }),
                Some(_) => {}
                None => {
                    io.say("");
                    break;
                }
            }
        }
        Reply::Value(answers)
    }

    async fn request_feedback(&self, _session: &SessionId, turn: &Turn, verdict: &Verdict) -> Reply<Feedback> {
        let mut io = self.io.lock().unwrap();
        let decision = match verdict.decision {
            Decision::Accept => "ACCEPT",
            Decision::Regenerate => "REGENERATE",
        };
        io.say(format!("\nImage {}", turn.image.path));
        io.say(format_scores(&turn.evaluation));
        io.say(format!("  verdict {decision} (threshold {:.2})", verdict.threshold));
        if !turn.evaluation.improvement_suggestions.is_empty() {
            io.say(format!("  suggestions: {}", turn.evaluation.improvement_suggestions));
        }
        io.say("Feedback text, [a]ccept, [r]egenerate, or Enter to follow the verdict:");
        io.prompt("> ");
        match io.read_line() {
            Some(line) => Reply::Value(parse_feedback(&line)),
            None => {
                io.say("");
                Reply::Value(Feedback::default())
            }
        }
    }
}
