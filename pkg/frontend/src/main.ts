/** App shell: builds the static layout, wires events, and exposes the
 * same awaitable actions the event handlers use, so tests drive the
 * exact code paths a person clicks through. */

import { ApiError, Client } from "./api.js";
import {
  clearBanner,
  renderBanner,
  renderCardPanel,
  renderForm,
  renderTraceTimeline,
  renderTranscript,
  showFieldErrors,
} from "./render.js";
import { ConsoleSession, GuardError } from "./session.js";

export interface App {
  root: HTMLElement;
  client: Client;
  session: ConsoleSession | null;
  start(userId: string): Promise<void>;
  send(text: string): Promise<void>;
  submit(values: Record<string, string>): Promise<void>;
  showTrace(turnId: number): Promise<void>;
  refreshCards(): Promise<void>;
}

const LAYOUT = `
  <header class="top">
    <strong>payments console</strong>
    <span class="spacer"></span>
    <input id="user-id" placeholder="user id" value="demo" />
    <button id="start" type="button">Start session</button>
    <span id="session-label"></span>
  </header>
  <main class="layout">
    <section class="chat">
      <div id="banner-mount"></div>
      <div id="transcript" class="transcript"></div>
      <div id="form-mount"></div>
      <div class="composer">
        <input id="composer-input" placeholder="Ask about cards or payments…" />
        <button id="send" type="button">Send</button>
      </div>
    </section>
    <aside class="side">
      <div id="cards-panel"></div>
      <div id="trace-panel"></div>
    </aside>
  </main>
`;

export function bootstrap(root: HTMLElement, client: Client): App {
  root.innerHTML = LAYOUT;
  const grab = <T extends HTMLElement>(id: string): T =>
    root.querySelector<T>(`#${id}`)!;

  const transcriptEl = grab<HTMLDivElement>("transcript");
  const formMount = grab<HTMLDivElement>("form-mount");
  const bannerMount = grab<HTMLDivElement>("banner-mount");
  const cardsPanel = grab<HTMLDivElement>("cards-panel");
  const tracePanel = grab<HTMLDivElement>("trace-panel");
  const composerInput = grab<HTMLInputElement>("composer-input");
  const sendButton = grab<HTMLButtonElement>("send");
  const startButton = grab<HTMLButtonElement>("start");
  const userInput = grab<HTMLInputElement>("user-id");
  const sessionLabel = grab<HTMLSpanElement>("session-label");

  const app: App = {
    root,
    client,
    session: null,
    start,
    send,
    submit,
    showTrace,
    refreshCards,
  };

  function rerender(): void {
    const session = app.session;
    composerInput.disabled = !session || !session.canSend();
    sendButton.disabled = composerInput.disabled;
    if (!session) return;

    renderTranscript(transcriptEl, session.transcript, (turnId) => {
      void showTrace(turnId);
    });
    if (session.state === "form_open" && session.pendingInterrupt) {
      renderForm(formMount, session.pendingInterrupt, (values) => {
        void submit(values);
      });
    } else {
      formMount.replaceChildren();
    }
  }

  function fail(err: unknown, retry: (() => void) | null): void {
    if (err instanceof GuardError) return; // double-click etc.; UI already reflects it
    const message =
      err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    renderBanner(bannerMount, message, retry);
    rerender();
  }

  async function start(userId: string): Promise<void> {
    try {
      const { session_id } = await client.createSession(userId);
      app.session = new ConsoleSession(client, session_id, userId);
      sessionLabel.textContent = session_id;
      clearBanner(bannerMount);
      tracePanel.replaceChildren();
      await refreshCards();
    } catch (err) {
      fail(err, () => void start(userId));
      return;
    }
    rerender();
  }

  async function send(text: string): Promise<void> {
    const session = app.session;
    if (!session || !text.trim()) return;
    try {
      const response = await session.sendMessage(text);
      clearBanner(bannerMount);
      composerInput.value = "";
      rerender();
      if (response.status !== "interrupted") {
        await refreshCards();
        await showTrace(response.turn_id);
      }
    } catch (err) {
      fail(err, () => void send(text));
    }
  }

  async function submit(values: Record<string, string>): Promise<void> {
    const session = app.session;
    if (!session) return;
    try {
      const result = await session.submitForm(values);
      if (result.kind === "blocked") {
        const form = formMount.querySelector<HTMLFormElement>("form");
        if (form) showFieldErrors(form, result.errors);
        return;
      }
      clearBanner(bannerMount);
      rerender();
      if (result.response.status !== "interrupted") {
        await refreshCards();
        await showTrace(result.response.turn_id);
      }
    } catch (err) {
      fail(err, () => void submit(values));
    }
  }

  async function showTrace(turnId: number): Promise<void> {
    const session = app.session;
    if (!session) return;
    try {
      const rows = await session.loadTrace(turnId);
      renderTraceTimeline(tracePanel, turnId, rows);
    } catch (err) {
      renderTraceTimeline(tracePanel, turnId, null);
      fail(err, () => void showTrace(turnId));
    }
  }

  async function refreshCards(): Promise<void> {
    const session = app.session;
    if (!session) return;
    try {
      renderCardPanel(cardsPanel, await session.loadCards());
    } catch (err) {
      fail(err, () => void refreshCards());
    }
  }

  startButton.addEventListener("click", () => void start(userInput.value));
  sendButton.addEventListener("click", () => void send(composerInput.value));
  composerInput.addEventListener("keydown", (event) => {
    if (event.key === "Enter") void send(composerInput.value);
  });

  rerender();
  return app;
}

declare global {
  interface Window {
    __HMASP_BASE__?: string;
  }
}

// Auto-boot only on the real page (index.html marks its mount point);
// tests create their own mount and call bootstrap explicitly.
const mount = typeof document !== "undefined"
  ? document.querySelector<HTMLElement>("#app[data-autoboot]")
  : null;
if (mount) {
  bootstrap(mount, new Client(window.__HMASP_BASE__ ?? ""));
}
