// Pure session-view state. Everything shown in the UI is derived from
// server payloads; nothing is fabricated or cached client-side.

import {
  AssistantApi,
  ReplacementPair,
  Screen,
  SessionExpiredError,
  SessionSnapshot,
  TurnPayload,
} from './api.js';

export interface ChatMessage {
  speaker: 'user' | 'bot';
  text: string;
  /** Decoded action string, when the turn produced one. */
  action?: string | null;
  /** Routing badge: in_space, fallback, or timeout_default. */
  route?: string;
  fallbackReason?: string | null;
  latencyMs?: number;
}

export interface UiState {
  sessionId: string | null;
  phase: string;
  currentStep: number | null;
  screen: Screen;
  pendingPairs: ReplacementPair[] | null;
  messages: ChatMessage[];
  turns: number;
  lastLatencyMs: number | null;
  /** Last transport or server error, cleared on the next successful turn. */
  error: string | null;
  /** Set when the server no longer knows the session. */
  expired: boolean;
}

export function initialState(): UiState {
  return {
    sessionId: null,
    phase: 'exploration',
    currentStep: null,
    screen: { kind: 'none' },
    pendingPairs: null,
    messages: [],
    turns: 0,
    lastLatencyMs: null,
    error: null,
    expired: false,
  };
}

/**
 * The server-derived part of the view. Computed the same way from a turn
 * payload as from a fresh session snapshot, so the two can be compared.
 */
export interface CoreView {
  phase: string;
  taskId: string | null;
  taskTitle: string | null;
  taskDescription: string | null;
  stepIndex: number | null;
  stepCount: number | null;
  stepText: string | null;
  requirements: string[];
  pendingPairs: ReplacementPair[];
  screenKind: string;
  optionRanks: number[];
}

function viewFromParts(
  phase: string,
  currentStep: number | null,
  screen: Screen,
  pending: ReplacementPair[] | null,
): CoreView {
  const view: CoreView = {
    phase,
    taskId: null,
    taskTitle: null,
    taskDescription: null,
    stepIndex: currentStep,
    stepCount: null,
    stepText: null,
    requirements: [],
    pendingPairs: pending ?? [],
    screenKind: screen.kind,
    optionRanks: [],
  };
  if (screen.kind === 'step') {
    view.taskId = screen.task_id;
    view.taskTitle = screen.task_title;
    view.taskDescription = screen.task_description;
    view.stepCount = screen.n_steps;
    view.stepText = screen.step_text;
    view.requirements = [...screen.requirements];
  } else if (screen.kind === 'search_results') {
    view.optionRanks = screen.items.map((item) => item.rank);
  }
  return view;
}

export function coreView(state: UiState): CoreView {
  return viewFromParts(state.phase, state.currentStep, state.screen, state.pendingPairs);
}

export function coreViewFromSnapshot(snapshot: SessionSnapshot): CoreView {
  return viewFromParts(
    snapshot.phase,
    snapshot.current_step,
    snapshot.screen,
    snapshot.pending_replacement,
  );
}

/** Synthetic utterance sent when the user clicks a search result card. */
export function optionUtterance(rank: number): string {
  return `select option ${rank}`;
}

export function applySnapshot(state: UiState, snapshot: SessionSnapshot): UiState {
  const messages: ChatMessage[] = snapshot.history.map((entry) => ({
    speaker: entry.speaker === 'user' ? 'user' : 'bot',
    text: entry.text,
  }));
  return {
    ...state,
    sessionId: snapshot.session_id,
    phase: snapshot.phase,
    currentStep: snapshot.current_step,
    screen: snapshot.screen,
    pendingPairs: snapshot.pending_replacement,
    messages,
    turns: snapshot.turns,
    error: null,
    expired: false,
  };
}

export function applyUserMessage(state: UiState, text: string): UiState {
  return {
    ...state,
    messages: [...state.messages, { speaker: 'user', text }],
  };
}

export function applyTurn(state: UiState, turn: TurnPayload): UiState {
  const botMessage: ChatMessage = {
    speaker: 'bot',
    text: turn.response,
    action: turn.action,
    route: turn.route,
    fallbackReason: turn.fallback_reason,
    latencyMs: turn.latency_ms,
  };
  return {
    ...state,
    phase: turn.phase,
    currentStep: turn.current_step,
    screen: turn.screen,
    pendingPairs: turn.pending_replacement,
    messages: [...state.messages, botMessage],
    turns: turn.turn,
    lastLatencyMs: turn.latency_ms,
    error: null,
    expired: false,
  };
}

export function applyError(state: UiState, err: unknown): UiState {
  if (err instanceof SessionExpiredError) {
    return { ...state, expired: true, error: err.message };
  }
  const message = err instanceof Error ? err.message : String(err);
  return { ...state, error: message };
}

export type StateListener = (state: UiState) => void;

/**
 * Drives a single conversation. One request in flight at a time; callers
 * should disable input while `busy` is true.
 */
export class ChatController {
  state: UiState = initialState();
  busy = false;
  /** Utterance to offer for retry after a transport failure. */
  lastFailedText: string | null = null;

  private listeners: StateListener[] = [];

  constructor(private client: AssistantApi) {}

  onChange(listener: StateListener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  private set(state: UiState): void {
    this.state = state;
    this.emit();
  }

  async start(): Promise<void> {
    const sessionId = await this.client.createSession();
    const snapshot = await this.client.getSession(sessionId);
    this.set(applySnapshot(initialState(), snapshot));
  }

  /** Sends one utterance. Ignored while a request is already in flight. */
  async send(text: string): Promise<TurnPayload | null> {
    const trimmed = text.trim();
    if (this.busy || !this.state.sessionId || trimmed === '') return null;
    this.busy = true;
    this.set(applyUserMessage(this.state, trimmed));
    try {
      const turn = await this.client.sendUtterance(this.state.sessionId, trimmed);
      this.lastFailedText = null;
      this.set(applyTurn(this.state, turn));
      return turn;
    } catch (err) {
      this.lastFailedText = trimmed;
      this.set(applyError(this.state, err));
      return null;
    } finally {
      this.busy = false;
      this.emit();
    }
  }

  /** Search result card click: routed through the normal utterance path. */
  async clickOption(rank: number): Promise<TurnPayload | null> {
    return this.send(optionUtterance(rank));
  }

  /** Confirmation dialog choice. Sends exactly one utterance. */
  async confirm(accept: boolean): Promise<TurnPayload | null> {
    return this.send(accept ? 'yes' : 'no');
  }

  async retry(): Promise<TurnPayload | null> {
    const text = this.lastFailedText;
    if (text === null) return null;
    // The user message is already in the transcript; resend without
    // appending a duplicate.
    if (this.busy || !this.state.sessionId) return null;
    this.busy = true;
    try {
      const turn = await this.client.sendUtterance(this.state.sessionId, text);
      this.lastFailedText = null;
      this.set(applyTurn(this.state, turn));
      return turn;
    } catch (err) {
      this.set(applyError(this.state, err));
      return null;
    } finally {
      this.busy = false;
      this.emit();
    }
  }
}
