import { describe, expect, it } from 'vitest';

import {
  ApiError,
  AssistantApi,
  Screen,
  SessionExpiredError,
  SessionSnapshot,
  TurnPayload,
} from '../src/api.js';
import {
  ChatController,
  applyError,
  applySnapshot,
  applyTurn,
  applyUserMessage,
  coreView,
  coreViewFromSnapshot,
  initialState,
  optionUtterance,
} from '../src/state.js';

const STEP_SCREEN: Screen = {
  kind: 'step',
  task_id: 'soup-1',
  task_title: 'lentil soup',
  task_description: 'a warming soup.',
  step_index: 2,
  n_steps: 5,
  step_text: 'simmer the lentils.',
  requirements: ['1 cup lentils', '4 cups stock'],
};

const SEARCH_SCREEN: Screen = {
  kind: 'search_results',
  items: [
    { rank: 1, id: 'soup-1', title: 'lentil soup', description: 'a warming soup.' },
    { rank: 2, id: 'bread-1', title: 'soda bread', description: 'quick bread.' },
  ],
};

function makeTurn(overrides: Partial<TurnPayload> = {}): TurnPayload {
  return {
    response: 'Step 2 of 5: simmer the lentils.',
    action: 'next()',
    route: 'in_space',
    phase: 'execution',
    current_step: 2,
    screen: STEP_SCREEN,
    latency_ms: 12.5,
    turn: 3,
    fallback_reason: null,
    rejection: null,
    question_type: null,
    pending_replacement: null,
    ...overrides,
  };
}

function makeSnapshot(overrides: Partial<SessionSnapshot> = {}): SessionSnapshot {
  return {
    session_id: 's-1',
    phase: 'execution',
    task: { id: 'soup-1', title: 'lentil soup' },
    current_step: 2,
    step_text: 'simmer the lentils.',
    n_steps: 5,
    pending_replacement: null,
    search_results: [],
    turns: 3,
    history: [
      { speaker: 'user', text: 'next' },
      { speaker: 'bot', text: 'Step 2 of 5: simmer the lentils.' },
    ],
    screen: STEP_SCREEN,
    ...overrides,
  };
}

describe('optionUtterance', () => {
  it('names the rank the decoder expects', () => {
    expect(optionUtterance(1)).toBe('select option 1');
    expect(optionUtterance(3)).toBe('select option 3');
  });
});

describe('coreView', () => {
  it('matches the snapshot derivation when parts agree', () => {
    const state = applyTurn(initialState(), makeTurn());
    expect(coreView(state)).toEqual(coreViewFromSnapshot(makeSnapshot()));
  });

  it('pulls task fields from a step screen', () => {
    const view = coreView(applyTurn(initialState(), makeTurn()));
    expect(view.taskId).toBe('soup-1');
    expect(view.taskTitle).toBe('lentil soup');
    expect(view.taskDescription).toBe('a warming soup.');
    expect(view.stepIndex).toBe(2);
    expect(view.stepCount).toBe(5);
    expect(view.stepText).toBe('simmer the lentils.');
    expect(view.requirements).toEqual(['1 cup lentils', '4 cups stock']);
    expect(view.optionRanks).toEqual([]);
  });

  it('pulls option ranks from a search screen', () => {
    const turn = makeTurn({
      phase: 'exploration',
      current_step: null,
      screen: SEARCH_SCREEN,
    });
    const view = coreView(applyTurn(initialState(), turn));
    expect(view.screenKind).toBe('search_results');
    expect(view.optionRanks).toEqual([1, 2]);
    expect(view.taskId).toBeNull();
    expect(view.stepText).toBeNull();
  });

  it('treats a null pending list as no pending pairs', () => {
    const view = coreView(initialState());
    expect(view.pendingPairs).toEqual([]);
    expect(view.screenKind).toBe('none');
  });
});

describe('applyTurn', () => {
  it('appends an annotated bot message and updates session fields', () => {
    const before = applyUserMessage(initialState(), 'next');
    const state = applyTurn(before, makeTurn());
    expect(state.messages).toHaveLength(2);
    const bot = state.messages[1];
    expect(bot.speaker).toBe('bot');
    expect(bot.action).toBe('next()');
    expect(bot.route).toBe('in_space');
    expect(bot.latencyMs).toBe(12.5);
    expect(state.phase).toBe('execution');
    expect(state.currentStep).toBe(2);
    expect(state.turns).toBe(3);
    expect(state.lastLatencyMs).toBe(12.5);
  });

  it('clears a previous error on success', () => {
    const errored = applyError(initialState(), new Error('boom'));
    expect(errored.error).toBe('boom');
    const state = applyTurn(errored, makeTurn());
    expect(state.error).toBeNull();
  });

  it('surfaces pending replacement pairs', () => {
    const turn = makeTurn({
      pending_replacement: [{ original: 'stock', replacement: 'water' }],
    });
    const state = applyTurn(initialState(), turn);
    expect(state.pendingPairs).toEqual([{ original: 'stock', replacement: 'water' }]);
  });
});

describe('applySnapshot', () => {
  it('rebuilds the transcript from history', () => {
    const state = applySnapshot(initialState(), makeSnapshot());
    expect(state.sessionId).toBe('s-1');
    expect(state.messages.map((m) => m.speaker)).toEqual(['user', 'bot']);
    expect(state.phase).toBe('execution');
    expect(state.turns).toBe(3);
  });
});

describe('applyError', () => {
  it('marks the session expired on a 404', () => {
    const state = applyError(initialState(), new SessionExpiredError('unknown session'));
    expect(state.expired).toBe(true);
    expect(state.error).toBe('unknown session');
  });

  it('keeps other failures as a plain error', () => {
    const state = applyError(initialState(), new ApiError(500, 'server error'));
    expect(state.expired).toBe(false);
    expect(state.error).toBe('server error');
  });
});

type Resolver = (turn: TurnPayload) => void;

function stubApi(): { api: AssistantApi; calls: string[]; release: () => Resolver } {
  const calls: string[] = [];
  let pendingResolve: Resolver | null = null;
  const api: AssistantApi = {
    async health() {
      return { status: 'ok' };
    },
    async createSession() {
      return 's-1';
    },
    async getSession() {
      return makeSnapshot({ history: [], turns: 0 });
    },
    sendUtterance(_sessionId, text) {
      calls.push(text);
      return new Promise<TurnPayload>((resolve) => {
        pendingResolve = resolve;
      });
    },
    async metrics() {
      return {};
    },
  };
  return {
    api,
    calls,
    release: () => {
      const resolve = pendingResolve;
      if (!resolve) throw new Error('nothing in flight');
      pendingResolve = null;
      return resolve;
    },
  };
}

describe('ChatController', () => {
  it('allows only one request in flight', async () => {
    const { api, calls, release } = stubApi();
    const controller = new ChatController(api);
    await controller.start();

    const first = controller.send('next');
    expect(controller.busy).toBe(true);
    const second = await controller.send('previous');
    expect(second).toBeNull();
    expect(calls).toEqual(['next']);

    release()(makeTurn());
    await first;
    expect(controller.busy).toBe(false);
  });

  it('ignores empty input and input before start', async () => {
    const { api, calls } = stubApi();
    const controller = new ChatController(api);
    expect(await controller.send('hello')).toBeNull();
    await controller.start();
    expect(await controller.send('   ')).toBeNull();
    expect(calls).toEqual([]);
  });

  it('sends exactly one utterance per confirmation choice', async () => {
    const { api, calls, release } = stubApi();
    const controller = new ChatController(api);
    await controller.start();

    const accept = controller.confirm(true);
    release()(makeTurn({ pending_replacement: null }));
    await accept;

    const decline = controller.confirm(false);
    release()(makeTurn());
    await decline;

    expect(calls).toEqual(['yes', 'no']);
  });

  it('keeps the user message and retries without duplicating it', async () => {
    const failing: AssistantApi = {
      async health() {
        return { status: 'ok' };
      },
      async createSession() {
        return 's-1';
      },
      async getSession() {
        return makeSnapshot({ history: [], turns: 0 });
      },
      sendUtterance: (() => {
        let attempts = 0;
        return async (_sessionId: string, _text: string) => {
          attempts += 1;
          if (attempts === 1) throw new Error('network down');
          return makeTurn();
        };
      })(),
      async metrics() {
        return {};
      },
    };
    const controller = new ChatController(failing);
    await controller.start();

    expect(await controller.send('next')).toBeNull();
    expect(controller.state.error).toBe('network down');
    expect(controller.lastFailedText).toBe('next');
    const userMessages = controller.state.messages.filter((m) => m.speaker === 'user');
    expect(userMessages).toHaveLength(1);

    const turn = await controller.retry();
    expect(turn).not.toBeNull();
    expect(controller.state.error).toBeNull();
    expect(controller.lastFailedText).toBeNull();
    const after = controller.state.messages.filter((m) => m.speaker === 'user');
    expect(after).toHaveLength(1);
  });

  it('flags an expired session so the shell can offer a new one', async () => {
    const expiring: AssistantApi = {
      async health() {
        return { status: 'ok' };
      },
      async createSession() {
        return 's-1';
      },
      async getSession() {
        return makeSnapshot({ history: [], turns: 0 });
      },
      async sendUtterance() {
        throw new SessionExpiredError('unknown or expired session');
      },
      async metrics() {
        return {};
      },
    };
    const controller = new ChatController(expiring);
    await controller.start();
    await controller.send('next');
    expect(controller.state.expired).toBe(true);
  });

  it('notifies listeners on every state change', async () => {
    const { api, release } = stubApi();
    const controller = new ChatController(api);
    const seen: number[] = [];
    controller.onChange((state) => seen.push(state.messages.length));
    await controller.start();
    const send = controller.send('next');
    release()(makeTurn());
    await send;
    // start, user message, bot message, plus the busy-flag emit.
    expect(seen.length).toBeGreaterThanOrEqual(3);
    expect(seen[seen.length - 1]).toBe(2);
  });
});
