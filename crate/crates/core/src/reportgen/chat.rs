use serde::{Deserialize, Serialize};

use super::{numbered_posts, ReportError, TokenBudget, TokenEstimator};
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest};

/// Opening of the system message. The gateway mocks key on its first
/// sentence to recognise chat requests.
pub const CHAT_SYSTEM_PREAMBLE: &str = "Answer only from the material below: a disaster report and the social media posts it was written from. \
If the material does not contain the answer, say that it does not.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingPost {
    pub id: String,
    pub text: String,
}

/// Fixed context of a chat session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grounding {
    pub report_body: String,
    pub posts: Vec<GroundingPost>,
}

impl Grounding {
    pub fn new(report_body: impl Into<String>, posts: impl IntoIterator<Item = (String, String)>) -> Self {
        Grounding {
            report_body: report_body.into(),
            posts: posts.into_iter().map(|(id, text)| GroundingPost { id, text }).collect(),
        }
    }

    pub fn system_message(&self) -> String {
        let texts: Vec<&str> = self.posts.iter().map(|p| p.text.as_str()).collect();
        format!("{CHAT_SYSTEM_PREAMBLE}\n\nReport:\n{}\n\nSource posts:\n{}", self.report_body, numbered_posts(&texts))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSession {
    pub id: String,
    pub report_id: String,
    grounding: Grounding,
    turns: Vec<ChatTurn>,
}

impl ChatSession {
    pub fn new(id: impl Into<String>, report_id: impl Into<String>, grounding: Grounding) -> Self {
        ChatSession { id: id.into(), report_id: report_id.into(), grounding, turns: Vec::new() }
    }

    pub fn grounding(&self) -> &Grounding {
        &self.grounding
    }

    pub fn turns(&self) -> &[ChatTurn] {
        &self.turns
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub answer: String,
    /// Oldest turns left out of the request to fit the budget.
    pub dropped_turns: usize,
}

/// Asks `question` against the session's grounding and prior turns. The
/// oldest turns are left out of the request until it fits. On failure the
/// session is unchanged.
pub fn chat_turn(
    session: &mut ChatSession,
    question: &str,
    gateway: &dyn ChatGateway,
    budget: &TokenBudget,
    estimator: &dyn TokenEstimator,
) -> Result<ChatReply, ReportError> {
    budget.validate()?;
    if question.trim().is_empty() {
        return Err(ReportError::Validation("question is empty".into()));
    }
    let system = ChatMessage::system(session.grounding.system_message());
    let fixed = estimator.estimate(&system.content) + estimator.estimate(question);
    let limit = budget.input_limit();
    if fixed > limit {
        return Err(ReportError::Budget { needed: fixed, available: limit });
    }
    let costs: Vec<usize> =
        session.turns.iter().map(|t| estimator.estimate(&t.question) + estimator.estimate(&t.answer)).collect();
    let mut dropped = 0;
    let mut history: usize = costs.iter().sum();
    while fixed + history > limit {
        history -= costs[dropped];
        dropped += 1;
    }
    let mut messages = vec![system];
    for t in &session.turns[dropped..] {
        messages.push(ChatMessage::user(t.question.clone()));
        messages.push(ChatMessage::assistant(t.answer.clone()));
    }
    messages.push(ChatMessage::user(question));
    let mut request = ChatRequest::new(gateway.model(), messages);
    request.max_tokens = budget.output_reserve;
    let answer = gateway.complete(&request)?;
    session.turns.push(ChatTurn { question: question.to_string(), answer: answer.clone() });
    Ok(ChatReply { answer, dropped_turns: dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ExtractiveGateway, GatewayError, Role, ScriptedGateway};
    use crate::reportgen::{token_estimate, HeuristicEstimator};

    fn session() -> ChatSession {
        ChatSession::new(
            "s1",
            "r1",
            Grounding::new(
                "The fire destroyed approximately 13,972 homes in Paradise.",
                [("p1".to_string(), "Evacuation center open at the church".to_string())],
            ),
        )
    }

    #[test]
    fn answer_is_appended() {
        let mut s = session();
        let gw = ScriptedGateway::constant("About 13,972 homes.");
        let reply = chat_turn(&mut s, "How many homes?", &gw, &TokenBudget::default(), &HeuristicEstimator).unwrap();
        assert_eq!(reply.answer, "About 13,972 homes.");
        assert_eq!(s.turns().len(), 1);
        let req = &gw.requests()[0];
        assert_eq!(req.messages[0].role, Role::System);
        assert!(req.messages[0].content.contains("13,972"));
    }

    #[test]
    fn failure_leaves_session_unchanged() {
        let mut s = session();
        let gw = ScriptedGateway::from_fn(|_, _| Err(GatewayError::Transport("down".into())));
        assert!(chat_turn(&mut s, "q?", &gw, &TokenBudget::default(), &HeuristicEstimator).is_err());
        assert!(s.turns().is_empty());
    }

    #[test]
    fn oldest_turns_dropped_first() {
        let mut s = session();
        let gw = ScriptedGateway::constant("a".repeat(40));
        let big = TokenBudget::default();
        chat_turn(&mut s, "first question", &gw, &big, &HeuristicEstimator).unwrap();
        chat_turn(&mut s, "second question", &gw, &big, &HeuristicEstimator).unwrap();
        let fixed = token_estimate(&s.grounding().system_message()) + token_estimate("third");
        let second = token_estimate("second question") + 10;
        // room for the newest turn only
        let budget = TokenBudget::new(fixed + second + 100, 100).unwrap();
        let reply = chat_turn(&mut s, "third", &gw, &budget, &HeuristicEstimator).unwrap();
        assert_eq!(reply.dropped_turns, 1);
        let sent = &gw.requests()[2].messages;
        assert_eq!(sent.len(), 4);
        assert_eq!(sent[1].content, "second question");
        assert_eq!(s.turns().len(), 3);
    }

    #[test]
    fn extractive_gateway_answers_from_grounding() {
        let mut s = session();
        let reply = chat_turn(&mut s, "How many homes were destroyed?", &ExtractiveGateway, &TokenBudget::default(), &HeuristicEstimator)
            .unwrap();
        assert!(reply.answer.contains("13,972 homes"), "{}", reply.answer);
    }
}
