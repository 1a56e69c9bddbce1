//! Message kind labels. The HTTP layer logs requests under the same names.

pub const REGISTER_REQUEST: &str = "register_request";
pub const REGISTER_RESPONSE: &str = "register_response";
pub const ACCOUNT_REQUEST: &str = "account_request";
pub const ACCOUNT_RESPONSE: &str = "account_response";
pub const LINK_REQUEST: &str = "link_request";
pub const LINK_RESPONSE: &str = "link_response";
pub const GRANT_REQUEST: &str = "grant_request";
pub const GRANT_RESPONSE: &str = "grant_response";
pub const STATUS_REQUEST: &str = "status_request";
pub const STATUS_RESPONSE: &str = "status_response";
pub const NOTICE: &str = "notice";
pub const NOTICE_ACK: &str = "notice_ack";
pub const DATA_REQUEST: &str = "data_request";
pub const DATA_RESPONSE: &str = "data_response";
pub const RECOMMENDATIONS_REQUEST: &str = "recommendations_request";
pub const RECOMMENDATIONS_RESPONSE: &str = "recommendations_response";
pub const INTROSPECT_REQUEST: &str = "introspect_request";
pub const INTROSPECT_RESPONSE: &str = "introspect_response";
pub const ERROR_RESPONSE: &str = "error_response";

// baseline only
pub const CLIENT_REGISTRATION_REQUEST: &str = "client_registration_request";
pub const CLIENT_REGISTRATION_RESPONSE: &str = "client_registration_response";
pub const PAT_AUTHORIZE_REQUEST: &str = "pat_authorize_request";
pub const PAT_AUTHORIZE_RESPONSE: &str = "pat_authorize_response";
pub const PAT_TOKEN_REQUEST: &str = "pat_token_request";
pub const PAT_TOKEN_RESPONSE: &str = "pat_token_response";
pub const RESOURCE_REGISTRATION_REQUEST: &str = "resource_registration_request";
pub const RESOURCE_REGISTRATION_RESPONSE: &str = "resource_registration_response";
pub const POLICY_REQUEST: &str = "policy_request";
pub const POLICY_RESPONSE: &str = "policy_response";
pub const TOKENLESS_ATTEMPT: &str = "tokenless_attempt";
pub const PERMISSION_REQUEST: &str = "permission_request";
pub const PERMISSION_RESPONSE: &str = "permission_response";
pub const TICKET: &str = "ticket";
pub const RPT_REQUEST: &str = "rpt_request";
pub const RPT_RESPONSE: &str = "rpt_response";
pub const RETRY_WITH_RPT: &str = "retry_with_rpt";
