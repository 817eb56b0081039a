// In-memory stand-in for the HTTP service, used by the reconciliation
// tests. It keeps authoritative session state and renders both turn
// payloads and snapshots from that one state, the same way the real
// service does.

import {
  AssistantApi,
  ReplacementPair,
  Screen,
  SessionExpiredError,
  SessionSnapshot,
  TurnPayload,
} from '../src/api.js';

interface MockTask {
  id: string;
  title: string;
  description: string;
  steps: string[];
  requirements: string[];
}

export const MOCK_TASKS: MockTask[] = [
  {
    id: 'soup-1',
    title: 'lentil soup',
    description: 'a warming one-pot soup.',
    steps: [
      'rinse the lentils.',
      'soften the onion in olive oil.',
      'add lentils and stock, then simmer.',
      'season and serve.',
    ],
    requirements: ['1 cup lentils', '4 cups vegetable stock', '1 onion', 'olive oil'],
  },
  {
    id: 'bread-1',
    title: 'soda bread',
    description: 'quick bread with no yeast.',
    steps: ['mix the dry ingredients.', 'stir in buttermilk.', 'bake until hollow-sounding.'],
    requirements: ['4 cups flour', '2 cups buttermilk', '1 teaspoon baking soda'],
  },
];

interface MockSession {
  id: string;
  phase: string;
  task: MockTask | null;
  currentStep: number | null;
  searchResults: MockTask[];
  pending: ReplacementPair[] | null;
  turns: number;
  history: { speaker: string; text: string }[];
}

export class MockServer implements AssistantApi {
  sessions = new Map<string, MockSession>();
  utteranceCount = 0;
  private counter = 0;

  async health(): Promise<{ status: string }> {
    return { status: 'ok' };
  }

  async createSession(): Promise<string> {
    this.counter += 1;
    const id = `mock-${this.counter}`;
    this.sessions.set(id, {
      id,
      phase: 'exploration',
      task: null,
      currentStep: null,
      searchResults: [],
      pending: null,
      turns: 0,
      history: [],
    });
    return id;
  }

  async getSession(sessionId: string): Promise<SessionSnapshot> {
    const session = this.lookup(sessionId);
    return {
      session_id: session.id,
      phase: session.phase,
      task: session.task ? { id: session.task.id, title: session.task.title } : null,
      current_step: session.currentStep,
      step_text:
        session.task && session.currentStep
          ? session.task.steps[session.currentStep - 1]
          : null,
      n_steps: session.task ? session.task.steps.length : null,
      pending_replacement: session.pending,
      search_results: session.searchResults.map((task, i) => ({
        rank: i + 1,
        id: task.id,
        title: task.title,
      })),
      turns: session.turns,
      history: session.history.slice(-4),
      screen: this.screenFor(session),
    };
  }

  async sendUtterance(sessionId: string, text: string): Promise<TurnPayload> {
    const session = this.lookup(sessionId);
    this.utteranceCount += 1;
    session.turns += 1;
    const { response, action, route, reason } = this.dispatch(session, text);
    session.history.push({ speaker: 'user', text });
    session.history.push({ speaker: 'bot', text: response });
    return {
      response,
      action,
      route,
      phase: session.phase,
      current_step: session.currentStep,
      screen: this.screenFor(session),
      latency_ms: 1.0,
      turn: session.turns,
      fallback_reason: reason,
      rejection: null,
      question_type: null,
      pending_replacement: session.pending,
    };
  }

  async metrics(): Promise<Record<string, unknown>> {
    return { sessions: { active: this.sessions.size } };
  }

  expire(sessionId: string): void {
    this.sessions.delete(sessionId);
  }

  private lookup(sessionId: string): MockSession {
    const session = this.sessions.get(sessionId);
    if (!session) throw new SessionExpiredError('unknown or expired session');
    return session;
  }

  private screenFor(session: MockSession): Screen {
    if (session.task && session.currentStep) {
      return {
        kind: 'step',
        task_id: session.task.id,
        task_title: session.task.title,
        task_description: session.task.description,
        step_index: session.currentStep,
        n_steps: session.task.steps.length,
        step_text: session.task.steps[session.currentStep - 1],
        requirements: [...session.task.requirements],
      };
    }
    if (session.searchResults.length > 0) {
      return {
        kind: 'search_results',
        items: session.searchResults.map((task, i) => ({
          rank: i + 1,
          id: task.id,
          title: task.title,
          description: task.description,
        })),
      };
    }
    return { kind: 'none' };
  }

  private dispatch(
    session: MockSession,
    text: string,
  ): { response: string; action: string | null; route: string; reason: string | null } {
    const lowered = text.toLowerCase().trim();

    const search = lowered.match(/^(?:search for|find) (.+)$/);
    if (search) {
      session.searchResults = MOCK_TASKS;
      session.task = null;
      session.currentStep = null;
      session.phase = 'exploration';
      session.pending = null;
      const titles = MOCK_TASKS.map((t, i) => `${i + 1}) ${t.title}`).join(' ');
      return {
        response: `How about these: ${titles}`,
        action: `search("${search[1]}")`,
        route: 'in_space',
        reason: null,
      };
    }

    const select = lowered.match(/^select option (\d+)$/);
    if (select && session.searchResults.length > 0) {
      const rank = Number(select[1]);
      const task = session.searchResults[rank - 1];
      if (task) {
        session.task = { ...task, requirements: [...task.requirements] };
        session.currentStep = 1;
        session.phase = 'execution';
        return {
          response: `Let's do ${task.title}! Step 1 of ${task.steps.length}: ${task.steps[0]}`,
          action: `select(${rank})`,
          route: 'in_space',
          reason: null,
        };
      }
    }

    if (lowered === 'next' && session.task && session.currentStep) {
      session.currentStep = Math.min(session.currentStep + 1, session.task.steps.length);
      return {
        response: `Step ${session.currentStep}: ${session.task.steps[session.currentStep - 1]}`,
        action: 'next()',
        route: 'in_space',
        reason: null,
      };
    }

    if (lowered === 'previous' && session.task && session.currentStep) {
      session.currentStep = Math.max(session.currentStep - 1, 1);
      return {
        response: `Step ${session.currentStep}: ${session.task.steps[session.currentStep - 1]}`,
        action: 'previous()',
        route: 'in_space',
        reason: null,
      };
    }

    const replace = lowered.match(/^replace (.+) with (.+)$/);
    if (replace && session.task) {
      const original = session.task.requirements.find((r) => r.includes(replace[1]));
      if (original) {
        session.pending = [{ original, replacement: replace[2] }];
        return {
          response: `Swap ${original} for ${replace[2]}? Say yes or no.`,
          action: `replace("${replace[1]}", "${replace[2]}")`,
          route: 'in_space',
          reason: null,
        };
      }
    }

    if (lowered === 'yes' && session.pending && session.task) {
      const pairs = session.pending;
      session.pending = null;
      for (const pair of pairs) {
        session.task.requirements = session.task.requirements.map((r) =>
          r === pair.original ? pair.replacement : r,
        );
      }
      return {
        response: `Done! ${pairs[0].original} is now ${pairs[0].replacement}.`,
        action: 'confirm("yes")',
        route: 'in_space',
        reason: null,
      };
    }

    if (lowered === 'no' && session.pending) {
      session.pending = null;
      return {
        response: 'No problem, keeping the original.',
        action: 'confirm("no")',
        route: 'in_space',
        reason: null,
      };
    }

    if (lowered === 'stop') {
      session.task = null;
      session.currentStep = null;
      session.phase = 'exploration';
      session.pending = null;
      session.searchResults = [];
      return { response: 'Okay, stopping here.', action: 'stop()', route: 'in_space', reason: null };
    }

    if (lowered === 'play some music') {
      return {
        response: "I can't do that here, but I can help with the task.",
        action: 'play_music()',
        route: 'fallback',
        reason: 'out_of_space',
      };
    }

    return {
      response: "Let's keep going with the task.",
      action: 'chit_chat()',
      route: 'in_space',
      reason: null,
    };
  }
}
