// Browser entry point. Thin DOM layer over ChatController: renders the
// transcript, task card, option cards, and confirmation dialog from UiState.

import { ApiClient } from './api.js';
import { ChatController, UiState, coreView } from './state.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function apiBaseUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get('api') ?? window.location.origin;
}

class ChatApp {
  private controller: ChatController;
  private root: HTMLElement;
  private transcript!: HTMLElement;
  private sidebar!: HTMLElement;
  private statusBar!: HTMLElement;
  private input!: HTMLInputElement;
  private sendButton!: HTMLButtonElement;
  private dialog: HTMLElement | null = null;

  constructor(root: HTMLElement, controller: ChatController) {
    this.root = root;
    this.controller = controller;
    this.buildShell();
    controller.onChange((state) => this.render(state));
  }

  private buildShell(): void {
    this.root.innerHTML = '';
    const main = el('div', 'chat-main');
    this.transcript = el('div', 'transcript');
    main.appendChild(this.transcript);

    const form = el('form', 'composer');
    this.input = el('input', 'composer-input') as HTMLInputElement;
    this.input.type = 'text';
    this.input.placeholder = 'Ask for a task, or say what to do next';
    this.sendButton = el('button', 'composer-send', 'Send') as HTMLButtonElement;
    this.sendButton.type = 'submit';
    form.appendChild(this.input);
    form.appendChild(this.sendButton);
    form.addEventListener('submit', (event) => {
      event.preventDefault();
      const text = this.input.value;
      this.input.value = '';
      void this.controller.send(text);
    });
    main.appendChild(form);

    this.sidebar = el('div', 'sidebar');
    this.statusBar = el('div', 'status-bar');

    this.root.appendChild(main);
    this.root.appendChild(this.sidebar);
    this.root.appendChild(this.statusBar);
  }

  private render(state: UiState): void {
    this.renderTranscript(state);
    this.renderSidebar(state);
    this.renderStatus(state);
    this.renderDialog(state);
    const locked = this.controller.busy || state.expired;
    this.input.disabled = locked;
    this.sendButton.disabled = locked;
  }

  private renderTranscript(state: UiState): void {
    this.transcript.innerHTML = '';
    for (const message of state.messages) {
      const row = el('div', `message message-${message.speaker}`);
      row.appendChild(el('div', 'message-text', message.text));
      if (message.speaker === 'bot' && message.route) {
        const meta = el('div', 'message-meta');
        meta.appendChild(el('span', `badge badge-${message.route}`, message.route));
        if (message.action) {
          meta.appendChild(el('code', 'action-annotation', message.action));
        }
        if (message.fallbackReason) {
          meta.appendChild(el('span', 'fallback-reason', message.fallbackReason));
        }
        row.appendChild(meta);
      }
      this.transcript.appendChild(row);
    }
    if (state.error) {
      const banner = el('div', 'error-banner');
      banner.appendChild(el('span', 'error-text', state.error));
      if (this.controller.lastFailedText !== null) {
        const retry = el('button', 'retry-button', 'Retry') as HTMLButtonElement;
        retry.addEventListener('click', () => void this.controller.retry());
        banner.appendChild(retry);
      }
      if (state.expired) {
        const fresh = el('button', 'new-session-button', 'New session') as HTMLButtonElement;
        fresh.addEventListener('click', () => void this.controller.start());
        banner.appendChild(fresh);
      }
      this.transcript.appendChild(banner);
    }
    this.transcript.scrollTop = this.transcript.scrollHeight;
  }

  private renderSidebar(state: UiState): void {
    this.sidebar.innerHTML = '';
    const view = coreView(state);
    if (view.screenKind === 'step') {
      const card = el('div', 'task-card');
      card.appendChild(el('h2', 'task-title', view.taskTitle ?? ''));
      if (view.taskDescription) {
        card.appendChild(el('p', 'task-description', view.taskDescription));
      }
      const stepHead = `Step ${view.stepIndex} of ${view.stepCount}`;
      card.appendChild(el('h3', 'step-heading', stepHead));
      card.appendChild(el('p', 'step-text', view.stepText ?? ''));
      if (view.requirements.length > 0) {
        card.appendChild(el('h3', 'requirements-heading', "You'll need"));
        const list = el('ul', 'requirements');
        for (const requirement of view.requirements) {
          list.appendChild(el('li', 'requirement', requirement));
        }
        card.appendChild(list);
      }
      this.sidebar.appendChild(card);
    } else if (state.screen.kind === 'search_results') {
      const panel = el('div', 'results-panel');
      panel.appendChild(el('h2', 'results-heading', 'Matches'));
      for (const item of state.screen.items) {
        const card = el('button', 'option-card') as HTMLButtonElement;
        card.appendChild(el('div', 'option-title', `${item.rank}. ${item.title}`));
        card.appendChild(el('div', 'option-description', item.description));
        card.addEventListener('click', () => void this.controller.clickOption(item.rank));
        panel.appendChild(card);
      }
      this.sidebar.appendChild(panel);
    }
  }

  private renderStatus(state: UiState): void {
    this.statusBar.innerHTML = '';
    this.statusBar.appendChild(el('span', 'phase-label', state.phase));
    if (state.lastLatencyMs !== null) {
      this.statusBar.appendChild(
        el('span', 'latency-readout', `${state.lastLatencyMs.toFixed(0)} ms`),
      );
    }
  }

  private renderDialog(state: UiState): void {
    const pairs = state.pendingPairs ?? [];
    if (pairs.length === 0) {
      if (this.dialog) {
        this.dialog.remove();
        this.dialog = null;
      }
      return;
    }
    if (this.dialog) return;
    const overlay = el('div', 'dialog-overlay');
    const box = el('div', 'dialog');
    box.appendChild(el('h3', 'dialog-title', 'Confirm replacement'));
    for (const pair of pairs) {
      box.appendChild(
        el('p', 'dialog-pair', `Swap ${pair.original} for ${pair.replacement}?`),
      );
    }
    const actions = el('div', 'dialog-actions');
    const yes = el('button', 'dialog-yes', 'Yes, swap it') as HTMLButtonElement;
    yes.addEventListener('click', () => void this.controller.confirm(true));
    const no = el('button', 'dialog-no', 'No, keep it') as HTMLButtonElement;
    no.addEventListener('click', () => void this.controller.confirm(false));
    actions.appendChild(yes);
    actions.appendChild(no);
    box.appendChild(actions);
    overlay.appendChild(box);
    this.root.appendChild(overlay);
    this.dialog = overlay;
  }
}

async function main(): Promise<void> {
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app element');
  const client = new ApiClient(apiBaseUrl());
  const controller = new ChatController(client);
  new ChatApp(root, controller);
  await controller.start();
}

void main();
