/** Console-side session model: transcript, the (at most one) pending
 * interrupt, cached traces, and a three-state UI machine.
 *
 *   idle -> awaiting_reply -> (idle | form_open)
 *   form_open -> awaiting_reply
 *
 * No other transitions exist. The transcript is append-only, and a
 * request that fails on the wire leaves it untouched.
 */

import { ApiError } from "./api.js";
import type {
  CardRow,
  InterruptPayload,
  TraceRow,
  TurnResponse,
} from "./types.js";
import {
  checkForm,
  composeDisplayText,
  composeResumeText,
} from "./validators.js";

export type UiState = "idle" | "awaiting_reply" | "form_open";

export interface Bubble {
  speaker: "user" | "cpa";
  text: string;
  /** Set on the closing bubble of a finished turn; keys the trace view. */
  turnId?: number;
}

export type SubmitResult =
  | { kind: "blocked"; errors: Record<string, string> }
  | { kind: "sent"; response: TurnResponse };

/** The slice of the API client the session consumes (real or fake). */
export interface TurnApi {
  sendMessage(sessionId: string, text: string): Promise<TurnResponse>;
  resume(
    sessionId: string,
    interruptId: string,
    text: string,
  ): Promise<TurnResponse>;
  trace(sessionId: string, turnId: number): Promise<TraceRow[]>;
  cards(userId: string): Promise<CardRow[]>;
}

export class GuardError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "GuardError";
  }
}

export class ConsoleSession {
  private _state: UiState = "idle";
  private _pending: InterruptPayload | null = null;
  private readonly _transcript: Bubble[] = [];
  readonly traceCache = new Map<number, TraceRow[]>();
  lastTurnId: number | null = null;

  constructor(
    private readonly api: TurnApi,
    readonly sessionId: string,
    readonly userId: string,
  ) {}

  get state(): UiState {
    return this._state;
  }

  get pendingInterrupt(): InterruptPayload | null {
    return this._pending;
  }

  get transcript(): readonly Bubble[] {
    return this._transcript;
  }

  canSend(): boolean {
    return this._state === "idle";
  }

  /** One user turn. Pre: idle. On failure the transcript is unchanged
   * and the machine returns to idle so the message can be retried. */
  async sendMessage(text: string): Promise<TurnResponse> {
    if (this._state !== "idle")
      throw new GuardError("a reply or form is already pending");
    this._state = "awaiting_reply";
    let response: TurnResponse;
    try {
      response = await this.api.sendMessage(this.sessionId, text);
    } catch (err) {
      this._state = "idle";
      throw err;
    }
    this.absorb(text, response);
    return response;
  }

  /** Submit the open interrupt form. Field pre-checks run first; any
   * failure is reported inline and nothing touches the network. */
  async submitForm(values: Record<string, string>): Promise<SubmitResult> {
    if (this._state !== "form_open" || this._pending === null)
      throw new GuardError("no form is open");
    const pending = this._pending;
    const { cleaned, errors } = checkForm(pending.fields_requested, values);
    if (Object.keys(errors).length > 0) return { kind: "blocked", errors };

    const wireText = composeResumeText(pending.fields_requested, cleaned);
    const shownText = composeDisplayText(pending.fields_requested, cleaned);
    this._state = "awaiting_reply";
    let response: TurnResponse;
    try {
      response = await this.api.resume(
        this.sessionId,
        pending.interrupt_id,
        wireText,
      );
    } catch (err) {
      if (err instanceof ApiError && err.status === 410) {
        // The server no longer knows this interrupt; the form is dead.
        this._pending = null;
        this._state = "idle";
      } else {
        this._state = "form_open";
      }
      throw err;
    }
    this.absorb(shownText, response);
    return { kind: "sent", response };
  }

  async loadTrace(turnId: number): Promise<TraceRow[] | null> {
    const cached = this.traceCache.get(turnId);
    if (cached) return cached;
    try {
      const rows = await this.api.trace(this.sessionId, turnId);
      this.traceCache.set(turnId, rows);
      return rows;
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) return null;
      throw err;
    }
  }

  loadCards(): Promise<CardRow[]> {
    return this.api.cards(this.userId);
  }

  private absorb(userText: string, response: TurnResponse): void {
    this._transcript.push({ speaker: "user", text: userText });
    if (response.status === "interrupted" && response.interrupt) {
      this._transcript.push({
        speaker: "cpa",
        text: response.interrupt.prompt_text,
      });
      this._pending = response.interrupt;
      this._state = "form_open";
      return;
    }
    this._transcript.push({
      speaker: "cpa",
      text: response.reply ?? "",
      turnId: response.turn_id,
    });
    this.lastTurnId = response.turn_id;
    this._pending = null;
    this._state = "idle";
  }
}
