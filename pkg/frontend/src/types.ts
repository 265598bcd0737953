/** Wire types for the payments service JSON API. */

export type FieldKind =
  | "pan16"
  | "expiry_mmYY"
  | "cvv3"
  | "card_choice_index"
  | "otp6"
  | "amount";

export interface FieldSpec {
  name: string;
  kind: FieldKind;
  validation_hint: string;
}

export interface InterruptPayload {
  interrupt_id: string;
  workflow: string;
  prompt_text: string;
  fields_requested: FieldSpec[];
}

export type TurnStatus = "completed" | "interrupted" | "rejected";

export interface TurnResponse {
  status: TurnStatus;
  turn_id: number;
  reply?: string;
  interrupt?: InterruptPayload;
}

export interface TraceRow {
  from: string;
  to: string;
  turn_id: number;
}

export interface CardRow {
  card_id: string;
  masked_pan: string;
  holder_name: string;
  expiry: string;
}
