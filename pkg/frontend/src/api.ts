/** Thin typed client over the service's JSON endpoints. */

import type { CardRow, TraceRow, TurnResponse } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function toApiError(response: Response): Promise<ApiError> {
  let code = "unknown";
  let message = `HTTP ${response.status}`;
  try {
    const body = (await response.json()) as {
      error?: { code?: string; message?: string };
    };
    if (body.error?.code) code = body.error.code;
    if (body.error?.message) message = body.error.message;
  } catch {
    // non-JSON error body; keep the defaults
  }
  return new ApiError(response.status, code, message);
}

export class Client {
  constructor(readonly baseUrl: string = "") {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, {
        method,
        headers: body === undefined ? {} : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, "network_error", String(err));
    }
    if (!response.ok) throw await toApiError(response);
    return (await response.json()) as T;
  }

  createSession(userId: string): Promise<{ session_id: string }> {
    return this.request("POST", "/v1/sessions", { user_id: userId });
  }

  sendMessage(sessionId: string, text: string): Promise<TurnResponse> {
    return this.request(
      "POST",
      `/v1/sessions/${encodeURIComponent(sessionId)}/messages`,
      { text },
    );
  }

  resume(
    sessionId: string,
    interruptId: string,
    text: string,
  ): Promise<TurnResponse> {
    return this.request(
      "POST",
      `/v1/sessions/${encodeURIComponent(sessionId)}/resume`,
      { interrupt_id: interruptId, text },
    );
  }

  trace(sessionId: string, turnId: number): Promise<TraceRow[]> {
    return this.request(
      "GET",
      `/v1/sessions/${encodeURIComponent(sessionId)}/trace?turn=${turnId}`,
    );
  }

  cards(userId: string): Promise<CardRow[]> {
    return this.request("GET", `/v1/users/${encodeURIComponent(userId)}/cards`);
  }

  health(): Promise<{ ok: boolean }> {
    return this.request("GET", "/v1/health");
  }
}
