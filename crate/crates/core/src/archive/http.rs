use std::io::Read;
use std::time::Duration;

use super::{Archive, ArchiveError, ArchiveResponse};

const MAX_BODY_BYTES: u64 = 32 * 1024 * 1024;

/// Blocking HTTP transport. Redirects are returned, never followed.
pub struct HttpArchive {
    agent: ureq::Agent,
}

impl HttpArchive {
    pub fn new(timeout: Duration, user_agent: &str) -> Self {
        let agent = ureq::AgentBuilder::new().redirects(0).timeout(timeout).user_agent(user_agent).build();
        HttpArchive { agent }
    }
}

impl Default for HttpArchive {
    fn default() -> Self {
        HttpArchive::new(Duration::from_secs(60), concat!("listchurn/", env!("CARGO_PKG_VERSION")))
    }
}

fn into_response(resp: ureq::Response) -> Result<ArchiveResponse, ArchiveError> {
    let status = resp.status();
    let location = resp.header("location").map(str::to_string);
    let mut body = Vec::new();
    resp.into_reader()
        .take(MAX_BODY_BYTES)
        .read_to_end(&mut body)
        .map_err(|e| ArchiveError::ArchiveUnreachable(format!("reading body: {e}")))?;
    Ok(ArchiveResponse { status, location, body })
}

impl Archive for HttpArchive {
    fn get(&self, url: &str) -> Result<ArchiveResponse, ArchiveError> {
        match self.agent.get(url).call() {
            Ok(resp) => into_response(resp),
            Err(ureq::Error::Status(_, resp)) => into_response(resp),
            Err(ureq::Error::Transport(t)) => Err(ArchiveError::ArchiveUnreachable(t.to_string())),
        }
    }
}
